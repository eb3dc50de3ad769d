"""Command-line entry point: ``wmlab <subcommand> [options]``.

Exit codes: 0 on success, 2 for configuration errors, 1 for any error raised
while running. Failures print one JSON object to stderr (and to
``error.json`` in the output directory when it is known).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import Config, load_config
from .diagnostics import (CutoffSpec, averaged_map_residual, fit_exponential_decay,
                          hminus1_window_norm, linf_l2_velocity, null_coordinate_energies,
                          observability_ratio, psi_cutoff)
from .errors import ConfigError, WmlabError
from .evolver import DampingProfile, EvolveParams, evolve, make_bump_damping, replay
from .grid import Grid1D, GridState, centered_diff, energy, h1xl2_distance, linear_energy
from .hum import HumProblem, control_cost_report, hum_solve, optimality_trials
from .linear_wave import evolve_linear, free_dispersion, oracle_forced, random_linear_data
from .local_control import epsilon_tilde_probe, local_null_control
from .pipeline import (PipelineConfig, semi_global_control, stabilize_to_small_energy,
                       threshold_scan, trend_nonincreasing)
from .sphere import basis_point, renormalize
from .states import (harmonic_state, latitude_state, perturbed_state, random_state,
                     rest_state)

COMMANDS = ("simulate", "stabilize", "hum", "control-local", "control-global", "diagnose",
            "scan")
FLAG_KEYS = {"seed": "run.seed", "n": "run.n", "k": "run.k", "cfl": "run.cfl",
             "t_end": "run.t_end"}


class Run:
    """Resolved configuration, output directory and the files written."""

    def __init__(self, command: str, cfg: Config, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.outputs: list[str] = []
        r = cfg["run"]
        self.grid = Grid1D(r["n"])
        self.k = r["k"]
        self.seed = r["seed"]

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def manifest(self):
        io.write_manifest(self.out, self.command, self.cfg.text, self.seed, self.grid.n,
                          self.k, self.outputs)


# builders ---------------------------------------------------------------------

def build_state(run: Run, section: str, seed_offset: int = 0) -> GridState:
    c = run.cfg[section]
    grid, k = run.grid, run.k
    seed = (run.seed + seed_offset) if c["seed"] is None else c["seed"]
    p = None if c["point"] is None else renormalize(np.array(c["point"]))
    kind = c["kind"]
    if kind == "rest":
        return rest_state(grid, basis_point(k) if p is None else p)
    if kind == "harmonic":
        return harmonic_state(grid, k)
    if kind == "latitude":
        return latitude_state(grid, k, c["energy"])
    if kind == "random":
        return random_state(grid, k, c["energy"], seed, p=p, modes=c["modes"],
                            winding=c["winding"])
    if kind == "perturbed":
        return perturbed_state(grid, basis_point(k) if p is None else p, c["eps"], seed,
                               modes=c["modes"])
    if not c["path"]:
        raise ConfigError(f"{section}.path is required for kind = file", field=f"{section}.path")
    path = Path(c["path"])
    s = io.read_state_bin(path) if path.suffix == ".bin" else io.read_state_csv(path)
    if s.grid.n != grid.n or s.k != k:
        raise ConfigError("state file does not match run.n / run.k", field=f"{section}.path")
    return s


def build_damping(run: Run, grid: Grid1D | None = None) -> DampingProfile | None:
    d = run.cfg["damping"]
    grid = run.grid if grid is None else grid
    if d["kind"] == "none":
        return None
    if d["kind"] == "constant":
        return DampingProfile.constant(grid, d["alpha"])
    return make_bump_damping(grid, d["omega"], d["omega0"], d["amplitude"])


def _energy_plot(run: Run, csv_name: str, stem: str = "energy"):
    io.write_gnuplot(run.path(f"{stem}.gp"), csv_name, 1, [(2, "E")], logy=True)


def _write_final(run: Run, s: GridState):
    io.write_state_csv(run.path("final_state.csv"), s)
    io.write_state_bin(run.path("final_state.bin"), s)


# subcommands ------------------------------------------------------------------

def cmd_simulate(run: Run) -> dict:
    cfg = run.cfg
    s0 = build_state(run, "state")
    mode = cfg["simulate"]["mode"]
    r = cfg["run"]
    keep = cfg["simulate"]["save_trajectory"]
    if mode == "forced":
        path = cfg["simulate"]["control"]
        if not path:
            raise ConfigError("simulate.control is required for mode = forced",
                              field="simulate.control")
        ev = replay(s0, io.read_control_bin(path), record_every=r["record_every"],
                    keep_trajectory=keep)
    else:
        damping = build_damping(run) if mode == "damped" else None
        params = EvolveParams(t_end=r["t_end"], cfl=r["cfl"], record_every=r["record_every"])
        ev = evolve(s0, params, damping, keep_trajectory=keep)
    io.write_run_record(run.path("run_record.csv"), ev.record)
    _energy_plot(run, "run_record.csv")
    _write_final(run, ev.final)
    if keep:
        io.write_trajectory(run.path("trajectory.bin"), ev.trajectory)
    e = np.asarray(ev.record.E)
    return {"mode": mode, "E0": float(e[0]), "E_final": float(e[-1]),
            "relative_drift": float(abs(e[-1] - e[0]) / e[0]) if e[0] > 0 else 0.0,
            "constraint_violation_max": max(ev.record.constraint_violation_max),
            "tangency_violation_max": max(ev.record.tangency_violation_max),
            "dissipation": ev.record.dissipation_cumulative[-1],
            "steps": ev.record.steps, "dt": ev.record.dt}


def cmd_stabilize(run: Run) -> dict:
    c = run.cfg["stabilize"]
    s0 = build_state(run, "state")
    damping = build_damping(run)
    if damping is None:
        raise ConfigError("stabilize needs damping", field="damping.kind")
    res = stabilize_to_small_energy(s0, damping, c["e_target"], nu=c["nu"], t_max=c["t_max"],
                                    cfl=run.cfg["run"]["cfl"],
                                    record_every=run.cfg["run"]["record_every"],
                                    record_control=c["record_control"])
    io.write_run_record(run.path("run_record.csv"), res.record)
    _energy_plot(run, "run_record.csv")
    _write_final(run, res.state)
    if res.control is not None:
        io.write_control_bin(run.path("control.bin"), res.control)
    out = {"T1": res.T1, "E0": energy(s0), "E_final": energy(res.state),
           "e_target": c["e_target"]}
    if len(res.record.t) >= 8:
        C, rate, r2 = fit_exponential_decay(res.record.t, res.record.E)
        out["fit"] = {"C": C, "c": rate, "r2": r2}
    return out


def cmd_hum(run: Run) -> dict:
    c = run.cfg["hum"]
    grid = run.grid
    problem = HumProblem(grid, c["omega"], c["T"], c["n_max"], c["ridge"], c["propagator"],
                         run.cfg["run"]["cfl"])
    y0 = random_linear_data(grid, c["m"], run.seed, modes=c["modes"])
    res = hum_solve(problem, y0)
    e0 = float(np.sum(linear_energy(y0)))
    fd = evolve_linear(y0, problem.T, forcing=res.field, dt=problem.dt)
    if problem.propagator == "exact":
        fn = res.evaluate
        def forcing(t):
            return fn(t)[0]
    else:
        def forcing(t):
            return res.field.at(t)
    orc = oracle_forced(grid, y0, problem.T, forcing, c["m"], n_max=problem.n_max)
    gram = res.solver.gramian
    d_free = free_dispersion(y0, problem.T, dt=problem.dt)
    io.write_control_bin(run.path("control.bin"), res.field)
    norms = res.field.l2x_series()
    io.write_csv(run.path("control_norm.csv"), ["t", "control_l2"],
                 zip(res.field.times, norms))
    io.write_gnuplot(run.path("control_norm.gp"), "control_norm.csv", 1, [(2, "|f|")])
    if c["dump_gramian"]:
        io.write_gramian(run.path("gramian.csv"), gram)
        io.write_spectrum(run.path("spectrum.csv"), gram)
    out = {"E0": e0, "terminal_energy_fd": float(np.sum(linear_energy(fd))) / e0,
           "terminal_energy_oracle": float(np.sum(orc.energy())) / e0,
           "dispersion_bound": (2.0 * d_free) ** 2 + 1e-6,
           "gramian": {"size": gram.size, "condition": gram.condition,
                       "effective_rank": gram.effective_rank},
           "control_linf_l2": res.field.norm_linf_l2(), "control_l2": res.field.norm_l2(),
           "out_of_band": res.out_of_band, "warnings": res.warnings}
    if problem.propagator == "exact" and c["trials"] > 0:
        opt = optimality_trials(problem, y0, trials=c["trials"], seed=run.seed)
        out["optimality"] = {"trials": opt.trials, "worst_relative_change":
                             opt.worst_relative_change, "passed": opt.passed,
                             "max_null_effect": opt.max_null_effect}
    return out


def cmd_control_local(run: Run) -> dict:
    c = run.cfg["local"]
    grid, k = run.grid, run.k
    p = basis_point(k) if c["point"] is None else renormalize(np.array(c["point"]))
    u0 = perturbed_state(grid, p, c["eps"], run.seed)
    res = local_null_control(u0, p, T=c["T"], tol_local=c["tol_local"],
                             max_iter=c["max_iter"], omega=c["omega"], n_max=c["n_max"],
                             cfl=run.cfg["run"]["cfl"], propagator=c["propagator"],
                             ridge=c["ridge"])
    io.write_iterates(run.path("iterates.csv"), res.iterates)
    io.write_gnuplot(run.path("iterates.gp"), "iterates.csv", 1, [(2, "residual")],
                     logy=True, xlabel="k")
    io.write_control_bin(run.path("control.bin"), res.control)
    _write_final(run, res.final)
    out = {"eps": c["eps"], "initial_distance": h1xl2_distance(u0, p),
           "converged": res.converged, "residuals": [it.residual for it in res.iterates],
           "contractions": [it.contraction for it in res.iterates],
           "increments": res.increments,
           "wall_time": [it.wall_time for it in res.iterates]}
    if c["cost_samples"] > 0:
        samples = [random_linear_data(grid, k + 1, run.seed + 1000 + i, modes=4)
                   for i in range(c["cost_samples"])]
        cost = control_cost_report(res.problem, samples)
        res_before = [it.residual for it in res.iterates[:-1]]
        ok = all(inc <= cost.G_T * r for inc, r in zip(res.increments, res_before))
        out["cost"] = {"G_T": cost.G_T, "operator_bound": cost.operator_bound,
                       "rows": cost.rows, "increment_bound_holds": ok}
    return out


def cmd_control_global(run: Run) -> dict:
    c = run.cfg["pipeline"]
    d = run.cfg["damping"]
    u0 = build_state(run, "state")
    u1 = build_state(run, "target", seed_offset=1)
    pc = PipelineConfig(eps_tilde=c["eps_tilde"], e_target=c["e_target"], T=c["T"],
                        omega=d["omega"], omega0=d["omega0"], damping_amplitude=d["amplitude"],
                        cfl=run.cfg["run"]["cfl"], tol_local=c["tol_local"],
                        tol_global=c["tol_global"], chain_factor=c["chain_factor"],
                        probe_seeds=c["probe_seeds"], probe_iters=c["probe_iters"],
                        separate_phases=c["separate_phases"])
    res = semi_global_control(u0, u1, c["nu"], pc, damping=build_damping(run))
    if c["separate_phases"]:
        for name, sched in res.phases:
            io.write_control_bin(run.path(f"control_{name}.bin"), sched)
    else:
        io.write_control_bin(run.path("control.bin"), res.control)
    io.write_run_record(run.path("run_record.csv"), res.record)
    _energy_plot(run, "run_record.csv")
    t = np.asarray(res.record.t)
    cols = res.record.columns()
    rows = res.record.rows()
    for name, sched in res.phases:
        sel = [r for r, ti in zip(rows, t) if sched.t0 - 1e-9 <= ti <= sched.t1 + 1e-9]
        io.write_csv(run.path(f"phase_{name}.csv"), cols, sel)
    _write_final(run, res.final)
    return res.report


def cmd_diagnose(run: Run) -> dict:
    c = run.cfg["diagnose"]
    if not c["trajectory"]:
        raise ConfigError("diagnose.trajectory is required", field="diagnose.trajectory")
    traj = io.read_trajectory(c["trajectory"])
    grid = traj[0][1].grid
    damping = build_damping(run, grid)
    out: dict = {"samples": len(traj), "t0": traj[0][0], "t1": traj[-1][0]}

    def attempt(name, fn):
        try:
            out[name] = fn()
        except WmlabError as exc:
            out[name] = {"skipped": exc.to_dict()}

    def obs():
        rep = observability_ratio(traj, damping, c["window"])
        io.write_csv(run.path("observability_per_x.csv"), ["x", "velocity_l2_t"],
                     zip(grid.x, rep.per_x))
        return rep.to_dict()

    attempt("observability", obs)
    attempt("linf_l2_velocity", lambda: linf_l2_velocity(traj, c["linf_window"]))

    def avg():
        tilde, resid = averaged_map_residual(traj, psi_cutoff(c["psi_tau"], c["psi_end"]))
        io.write_csv(run.path("averaged_map.csv"),
                     ["x"] + [f"phi{i}" for i in range(tilde.shape[1])],
                     np.column_stack([grid.x, tilde]).tolist())
        return {"residual": resid, "sqrt_E0": math.sqrt(energy(traj[0][1]))}

    attempt("averaged_map", avg)
    out["null_coordinates"] = null_coordinate_energies(traj)

    def hm1():
        times = np.array([t for t, _ in traj])
        steps = np.diff(times)
        uniform = np.concatenate([[True], np.abs(steps - steps[0]) <= 1e-9 * steps[0]])
        stop = int(np.argmin(uniform)) if not np.all(uniform) else times.size
        times = times[:stop]
        j = int(np.argmin(np.abs(((grid.x - c["hminus1_x"] + math.pi) % (2 * math.pi))
                                 - math.pi)))
        series = np.array([centered_diff(s.phi_t, grid.dx)[j] for _, s in traj[:stop]])
        tau = c["hminus1_tau"]
        cut = CutoffSpec(times[0] + tau, times[-1] - tau, tau)
        return {"x0": float(grid.x[j]), "norm": hminus1_window_norm(times, series, cut)}

    attempt("hminus1_phi_tx", hm1)

    def fit():
        t = [tt for tt, _ in traj]
        e = [energy(s) for _, s in traj]
        C, rate, r2 = fit_exponential_decay(t, e)
        return {"C": C, "c": rate, "r2": r2}

    attempt("decay_fit", fit)
    return out


def _decay_job(args):
    n, k, seed, e0, amp, omega, omega0, t_end, cfl = args
    grid = Grid1D(n)
    damping = make_bump_damping(grid, omega, omega0, amp)
    s0 = random_state(grid, k, e0, seed)
    ev = evolve(s0, EvolveParams(t_end=t_end, cfl=cfl, record_every=8), damping,
                keep_trajectory=False)
    C, rate, r2 = fit_exponential_decay(ev.record.t, ev.record.E)
    return {"seed": seed, "E0": energy(s0), "E_final": ev.record.E[-1], "C": C, "c": rate,
            "r2": r2}


def cmd_scan(run: Run) -> dict:
    c = run.cfg["scan"]
    workers = run.cfg["run"]["workers"]
    if c["kind"] == "threshold":
        damping = build_damping(run)
        if damping is None:
            raise ConfigError("threshold scan needs damping", field="damping.kind")
        if run.k < 2:
            raise ConfigError("the near-harmonic family needs k >= 2", field="run.k")
        rows = threshold_scan(c["nu_list"], damping, k=run.k, t_end=c["t_end"],
                              cfl=run.cfg["run"]["cfl"], workers=workers)
        cols = ["nu", "E0", "c", "C", "r2", "E_final", "t_end"]
        io.write_csv(run.path("scan.csv"), cols, [[r[k] for k in cols] for r in rows])
        io.write_gnuplot(run.path("scan.gp"), "scan.csv", 2, [(3, "c")], xlabel="E0",
                         ylabel="rate")
        return {"rows": rows, "trend_nonincreasing": trend_nonincreasing(rows)}
    if c["kind"] == "eps_tilde":
        p = basis_point(run.k)
        res = epsilon_tilde_probe(p, run.grid, T=2 * math.pi, seeds=range(c["seeds"]),
                                  lo=c["lo"], hi=c["hi"], iters=c["iters"], workers=workers)
        io.write_csv(run.path("scan.csv"), ["eps", "converged"],
                     [[r["eps"], int(r["converged"])] for r in res.table])
        return {"eps_tilde": res.eps_tilde, "bracket": list(res.bracket)}
    d = run.cfg["damping"]
    jobs = [(run.grid.n, run.k, run.seed + i, run.cfg["state"]["energy"], d["amplitude"],
             d["omega"], d["omega0"], c["t_end"], run.cfg["run"]["cfl"])
            for i in range(c["seeds"])]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_decay_job, jobs))
    else:
        rows = [_decay_job(j) for j in jobs]
    cols = ["seed", "E0", "E_final", "C", "c", "r2"]
    io.write_csv(run.path("scan.csv"), cols, [[r[k] for k in cols] for r in rows])
    return {"rows": rows}


HANDLERS = {"simulate": cmd_simulate, "stabilize": cmd_stabilize, "hum": cmd_hum,
            "control-local": cmd_control_local, "control-global": cmd_control_global,
            "diagnose": cmd_diagnose, "scan": cmd_scan}


# driver -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--seed", metavar="U64")
    common.add_argument("--n")
    common.add_argument("--k")
    common.add_argument("--cfl")
    common.add_argument("--t-end", dest="t_end")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="section.key=value, repeatable")
    parser = argparse.ArgumentParser(prog="wmlab", description="wave-map control laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _emit_error(payload: dict, out: Path | None):
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text + "\n")


def resolve_config(args) -> Config:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", field="--config") from None
    overrides = []
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag)
        if v is not None:
            overrides.append((key, v))
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override must be KEY=VALUE, got {item!r}", field=item)
        key, value = item.split("=", 1)
        overrides.append((key.strip(), value))
    return load_config(text, overrides)


def resolve_out(args, cfg: Config) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get("WMLAB_OUT") or cfg["run"]["out"] or "wmlab_out"
    return Path(root) / args.command


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = resolve_config(args)
        out = resolve_out(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out)
        report = HANDLERS[args.command](run)
        io.write_json(run.path("report.json"), {"command": args.command, **report})
        run.manifest()
    except ConfigError as exc:
        _emit_error(exc.to_dict(), out)
        return 2
    except WmlabError as exc:
        _emit_error(exc.to_dict(), out)
        return 1
    except (ValueError, OSError) as exc:
        _emit_error({"error": "invalid_argument", "message": str(exc)}, out)
        return 1
    print(json.dumps({"command": args.command, "out": str(out), "status": "ok"}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
