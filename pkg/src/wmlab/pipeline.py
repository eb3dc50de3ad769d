"""Semi-global control: damp, walk a chain of rest states, undo by reversal.

The assembled control for u0 -> u1 is played without damping:

    A   damping of u0 replayed as a forcing, down to a small-energy state z0
    B0  local control z0 -> (p, 0), with p the renormalized mean of z0
    B   geodesic hops (p_i, 0) -> (p_{i+1}, 0), each through rest at the hop
        midpoint, ending at q
    C0  time reversal of a local control taking z1 to (q, 0)
    C   time reversal of the damped run from the velocity-reversed u1 to z1
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import fit_exponential_decay
from .errors import (AntipodalPair, BlowUp, ChainHopFailed, EnergyAboveThreshold,
                     NoContraction, ReplayMismatch, StallDetected, WindingMismatch)
from .evolver import (ControlField, ControlSchedule, DampingProfile, EvolveParams, RunRecord,
                      concatenate, evolve, make_bump_damping, replay, time_reverse)
from .grid import Grid1D, GridState, energy, h1xl2_distance, state_distance
from .local_control import epsilon_tilde_probe, local_exact_control, local_null_control
from .sphere import basis_point, geodesic_chain, renormalize, winding_number
from .states import harmonic_state, latitude_state

STALL_WINDOW = 32 * math.pi
STALL_REL = 1e-12


# Phase A ------------------------------------------------------------------

@dataclass
class StabilizeResult:
    state: GridState
    T1: float
    record: RunRecord
    control: ControlField | None

    def __iter__(self):
        return iter((self.state, self.T1, self.record))


def stabilize_to_small_energy(u0: GridState, damping: DampingProfile, e_target: float,
                              nu: float | None = None, t_max: float = 4000.0,
                              cfl: float = 0.5, record_every: int = 8,
                              record_control: bool = False,
                              stall_window: float = STALL_WINDOW) -> StabilizeResult:
    """Damped evolution from u0 until E <= e_target.

    Raises StallDetected when E loses less than 1e-12 of itself over a
    ``stall_window`` stretch of time, the signature of data trapped at a
    harmonic map.
    """
    e0 = energy(u0)
    if nu is not None and e0 > 2 * math.pi - nu:
        raise EnergyAboveThreshold("initial energy above 2pi - nu", energy=e0, nu=nu)
    if e0 <= e_target:
        rec = RunRecord()
        rec.append(0.0, u0, 0.0)
        return StabilizeResult(u0, 0.0, rec, None)
    history: deque = deque()

    def stop(t, s):
        e = energy(s)
        if e <= e_target:
            return True
        history.append((t, e))
        while len(history) > 1 and t - history[1][0] >= stall_window:
            history.popleft()
        t_old, e_old = history[0]
        if t - t_old >= stall_window and e_old - e < STALL_REL * e_old:
            raise StallDetected("energy stopped decreasing", time=t, energy=e,
                                window=stall_window)
        return False

    params = EvolveParams(t_end=t_max, cfl=cfl, record_every=record_every)
    ev = evolve(u0, params, damping, record_damping_control=record_control,
                keep_trajectory=False, stop=stop)
    if energy(ev.final) > e_target:
        raise StallDetected("energy target not reached within t_max", time=ev.t_final,
                            energy=energy(ev.final), e_target=e_target)
    return StabilizeResult(ev.final, ev.t_final, ev.record, ev.control)


# assembly -----------------------------------------------------------------

@dataclass
class PipelineConfig:
    eps_tilde: float | None = None
    e_target: float | None = None
    T: float = 2 * math.pi
    omega: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    omega0: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    damping_amplitude: float = 2.0
    cfl: float = 0.5
    tol_local: float = 1e-8
    tol_global: float = 1e-5
    chain_factor: float = 0.5
    t_max: float = 4000.0
    probe_seeds: int = 8
    probe_iters: int = 5
    separate_phases: bool = False
    energy_margin: float = 0.05


@dataclass
class PipelineResult:
    control: ControlSchedule
    final: GridState
    mismatch: float
    report: dict
    phases: list[tuple[str, ControlSchedule]] = field(default_factory=list)
    record: RunRecord | None = None


def _hop_step(eps_tilde: float, factor: float) -> float:
    # (p,0) and (q,0) are sqrt(2 pi)|p - q| apart in H^1 x L^2
    return factor * eps_tilde / math.sqrt(2.0 * math.pi)


def _chain(p: np.ndarray, q: np.ndarray, step: float) -> list[np.ndarray]:
    try:
        return geodesic_chain(p, q, step)
    except AntipodalPair:
        # route through any point orthogonal to p
        e = np.zeros_like(p)
        e[int(np.argmin(np.abs(p)))] = 1.0
        w = renormalize(e - np.dot(e, p) * p)
        first = geodesic_chain(p, w, step)
        return first + geodesic_chain(w, q, step)[1:]


def _rest(grid: Grid1D, p: np.ndarray) -> GridState:
    return GridState(grid, np.tile(p, (grid.n, 1)), np.zeros((grid.n, p.size)), check=False)


def _mean_point(s: GridState) -> np.ndarray:
    return renormalize(np.mean(s.phi, axis=0))


def _check_energy_bounds(rec: RunRecord, segments: list[tuple[str, ControlField]],
                         margin: float) -> dict:
    """sqrt(E(t)) <= sqrt(E(t_s)) + int_{t_s}^t ||f||_{L^2} per segment, and
    monotone energy on the damping segment."""
    t = np.asarray(rec.t)
    e = np.asarray(rec.E)
    worst = 0.0
    monotone_ok = True
    for name, seg in segments:
        sel = (t >= seg.t0 - 1e-9) & (t <= seg.t1 + 1e-9)
        if not np.any(sel):
            continue
        ts, es = t[sel], e[sel]
        norms = seg.l2x_series()
        ct = seg.times
        # cumulative L^1_t L^2_x by trapezoid on the control samples
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(ct) * (norms[1:] + norms[:-1]))])
        budget = math.sqrt(max(es[0], 0.0)) + np.interp(ts, ct, cum)
        lhs = np.sqrt(np.maximum(es, 0.0))
        slack = (1.0 + margin) * budget + 1e-9
        worst = max(worst, float(np.max(lhs / slack)))
        if name == "A":
            if np.any(np.diff(es) > 1e-12 * max(es[0], 1e-300)):
                monotone_ok = False
    return {"energy_bound_ratio_max": worst, "energy_bound_ok": worst <= 1.0,
            "phase_A_monotone": monotone_ok}


def semi_global_control(u0: GridState, u1: GridState, nu: float = 0.1,
                        config: PipelineConfig | None = None,
                        damping: DampingProfile | None = None) -> PipelineResult:
    """Control taking u0 to u1, both with energy at most 2pi - nu."""
    cfg = PipelineConfig() if config is None else config
    grid = u0.grid
    if u1.grid.n != grid.n or u1.k != u0.k:
        raise ValueError("u0 and u1 must share grid and target sphere")
    report: dict = {"k": u0.k, "n": grid.n, "nu": nu}
    if u0.k == 1:
        w0, w1 = winding_number(u0.phi), winding_number(u1.phi)
        report["winding"] = [w0, w1]
        if w0 != w1:
            raise WindingMismatch("u0 and u1 lie in different homotopy classes", segment=0,
                                  winding_u0=w0, winding_u1=w1)
    e_u0, e_u1 = energy(u0), energy(u1)
    report["energies"] = [e_u0, e_u1]
    for name, e in (("u0", e_u0), ("u1", e_u1)):
        if e > 2 * math.pi - nu:
            raise EnergyAboveThreshold(f"{name} energy above 2pi - nu", which=name, energy=e,
                                       nu=nu)
    if damping is None:
        damping = make_bump_damping(grid, cfg.omega, cfg.omega0, cfg.damping_amplitude)
    local_kw = dict(T=cfg.T, omega=cfg.omega, cfl=cfg.cfl)

    eps = cfg.eps_tilde
    if eps is None:
        probe = epsilon_tilde_probe(basis_point(u0.k), grid, T=cfg.T,
                                    seeds=range(cfg.probe_seeds), iters=cfg.probe_iters,
                                    omega=cfg.omega, cfl=cfg.cfl)
        eps = probe.eps_tilde
        report["eps_tilde_probe"] = {"bracket": list(probe.bracket), "table": probe.table}
        if eps <= 0:
            raise ChainHopFailed("no converging radius found for local control", segment=0)
    e_target = cfg.e_target if cfg.e_target is not None else eps ** 2 / 100.0
    report.update(eps_tilde=eps, e_target=e_target)

    # Phase A and the damped leg of Phase C
    sa = stabilize_to_small_energy(u0, damping, e_target, t_max=cfg.t_max, cfl=cfg.cfl,
                                   record_control=True)
    sc = stabilize_to_small_energy(time_reverse(u1), damping, e_target, t_max=cfg.t_max,
                                   cfl=cfg.cfl, record_control=True)
    z0, z1 = sa.state, sc.state
    p_hat, q_hat = _mean_point(z0), _mean_point(z1)
    gate = [h1xl2_distance(z0, p_hat), h1xl2_distance(z1, q_hat)]
    report["eps_gate"] = {"distances": gate, "passes": max(gate) <= eps}

    def local(u, p, segment):
        try:
            r = local_null_control(u, p, tol_local=cfg.tol_local, **local_kw)
        except (NoContraction, BlowUp) as exc:
            raise ChainHopFailed("local control failed", segment=segment,
                                 cause=exc.to_dict()) from exc
        if not r.converged:
            raise ChainHopFailed("local control did not converge", segment=segment,
                                 residual=r.residual)
        return r

    b0 = local(z0, p_hat, 0)
    chain = _chain(p_hat, q_hat, _hop_step(eps, cfg.chain_factor))
    hops = []
    hop_controls = []
    for i in range(len(chain) - 1):
        a_pt, b_pt = chain[i], chain[i + 1]
        mid = renormalize(a_pt + b_pt)
        try:
            res = local_exact_control(_rest(grid, a_pt), _rest(grid, b_pt), mid,
                                      tol_local=cfg.tol_local, **local_kw)
        except (NoContraction, BlowUp, ReplayMismatch) as exc:
            raise ChainHopFailed("geodesic hop failed", segment=i + 1,
                                 cause=exc.to_dict()) from exc
        hops.append({"segment": i + 1, "mismatch": res.mismatch,
                     "forward_iterations": len(res.forward.iterates) - 1,
                     "backward_iterations": len(res.backward.iterates) - 1})
        hop_controls.append(res.control)
    c0 = local(z1, q_hat, len(chain))

    parts: list[tuple[str, list]] = []
    if sa.control is not None:
        parts.append(("A", [sa.control]))
    parts.append(("B0", [b0.control]))
    for i, hc in enumerate(hop_controls):
        parts.append((f"B{i + 1}", hc.segments))
    parts.append(("C0", [c0.control.reversed()]))
    if sc.control is not None:
        parts.append(("C", [sc.control.reversed()]))
    flat = [seg for _, segs in parts for seg in segs]
    schedule = concatenate(flat)
    named = []
    k = 0
    for name, segs in parts:
        named.append((name, schedule.segments[k:k + len(segs)]))
        k += len(segs)

    ev = replay(u0, schedule, record_every=8)
    mismatch = state_distance(ev.final, u1)
    labelled = [(name, seg) for name, segs in named for seg in segs]
    report.update(_check_energy_bounds(ev.record, labelled, cfg.energy_margin))
    T1a, T1c = sa.T1, sc.T1
    T2 = sum(s.t1 - s.t0 for name, segs in named if name.startswith("B") for s in segs)
    report.update({
        "phases": [{"name": name, "t0": segs[0].t0, "t1": segs[-1].t1,
                    "linf_l2": max(s.norm_linf_l2() for s in segs),
                    "l1_l2": sum(s.norm_l1_l2() for s in segs)} for name, segs in named],
        "T1": [T1a, T1c], "T2": T2, "T_total": schedule.t1 - schedule.t0,
        "p_hat": p_hat.tolist(), "q_hat": q_hat.tolist(), "chain_points": len(chain),
        "local_residuals": {"B0": b0.residual, "C0": c0.residual},
        "hops": hops,
        "mismatch": mismatch, "tol_global": cfg.tol_global,
        "max_step_drift": ev.record.max_step_drift,
    })
    size = math.sqrt(e_u0) + math.sqrt(e_u1)
    linf = schedule.norm_linf_l2()
    report["budget"] = {"linf_l2": linf, "l1_l2": schedule.norm_l1_l2(),
                        "data_size": size, "constant": linf / size if size > 0 else 0.0}
    result = PipelineResult(schedule, ev.final, mismatch, report,
                            [(n, ControlSchedule(s)) for n, s in named], ev.record)
    if mismatch > cfg.tol_global:
        raise ReplayMismatch("pipeline replay misses u1", mismatch=mismatch,
                             tolerance=cfg.tol_global)
    return result


# threshold scan -----------------------------------------------------------

def near_harmonic_family(grid: Grid1D, energies, k: int = 2) -> list[GridState]:
    """Latitude circles at rest with the given energies; 2pi gives (Q, 0)."""
    out = []
    for e in energies:
        if abs(e - 2 * math.pi) < 1e-12:
            out.append(harmonic_state(grid, k))
        else:
            out.append(latitude_state(grid, k, e))
    return out


def _scan_one(args) -> dict:
    n, probe_phi, probe_v, a, omega, omega0, t_end, cfl, pinned, floor = args
    grid = Grid1D(n)
    s0 = GridState(grid, probe_phi, probe_v)
    damping = DampingProfile(grid, a, omega, omega0)
    return decay_fit_run(s0, damping, t_end, cfl, pinned, floor)


def decay_fit_run(s0: GridState, damping: DampingProfile, t_end: float, cfl: float = 0.5,
                  pin_amplitude: bool = True, floor: float = 1e-14,
                  record_every: int = 8) -> dict:
    """Damped run from s0 and an exponential fit of its energy series.

    The run stops early once E falls below ``floor`` times max(E(0), 1).
    """
    e0 = energy(s0)
    params = EvolveParams(t_end=t_end, cfl=cfl, record_every=record_every)
    ev = evolve(s0, params, damping, keep_trajectory=False,
                stop=lambda t, s: energy(s) <= floor * max(e0, 1.0))
    t = np.asarray(ev.record.t)
    e = np.asarray(ev.record.E)
    row = {"E0": e0, "t_end": float(t[-1]), "E_final": float(e[-1])}
    if e0 <= 0:
        row.update(C=0.0, c=0.0, r2=1.0)
        return row
    keep = e > 0
    C, c, r2 = fit_exponential_decay(t[keep], e[keep], 0.5, pin_amplitude=pin_amplitude)
    row.update(C=C / e0, c=c, r2=r2)
    return row


def threshold_scan(nu_list, damping: DampingProfile, probes: list[GridState] | None = None,
                   k: int = 2, t_end: float = 8 * math.pi, cfl: float = 0.5,
                   pin_amplitude: bool = True, workers: int = 1) -> list[dict]:
    """Fitted decay rate for probes at energies 2pi - nu.

    Without ``probes`` the near-harmonic latitude family is used, so nu = 0
    is the harmonic map itself. The default fit pins the amplitude at E(0),
    so the rate is the uniform one E(t) <= E(0) exp(-c t) tracks.
    """
    grid = damping.grid
    nu_list = [float(v) for v in nu_list]
    if probes is None:
        probes = near_harmonic_family(grid, [2 * math.pi - v for v in nu_list], k)
    if len(probes) != len(nu_list):
        raise ValueError("need one probe per nu value")
    if workers > 1:
        jobs = [(grid.n, p.phi, p.phi_t, np.array(damping.a), damping.omega, damping.omega0, t_end, cfl,
                 pin_amplitude, 1e-14) for p in probes]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_scan_one, jobs))
    else:
        rows = [decay_fit_run(p, damping, t_end, cfl, pin_amplitude) for p in probes]
    for nu, row in zip(nu_list, rows):
        row["nu"] = nu
    return rows


def trend_nonincreasing(rows: list[dict], rel_tol: float = 0.0) -> bool:
    """Whether the rates are nonincreasing as E0 increases."""
    rates = [r["c"] for r in sorted(rows, key=lambda r: r["E0"])]
    return all(b <= a * (1.0 + rel_tol) + 1e-12 for a, b in zip(rates, rates[1:]))

