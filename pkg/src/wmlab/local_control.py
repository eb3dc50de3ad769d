"""Iterative nonlinear control of a near-equilibrium wave map to rest at p.

Each pass evolves the wave map under the current control, measures the
terminal deficit phi_k[T] - (p, 0), builds a linear control h_k taking the
linear wave from rest to minus that deficit, projects h_k onto the fixed
plane p-perp and adds it to the control. The nonlinear equation then sees
the new control through the tangent projection at phi.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, GramianIllConditioned, NoContraction, ReplayMismatch
from .evolver import (ControlField, ControlSchedule, EvolveParams, concatenate, evolve,
                      replay, time_reverse)
from .grid import Grid1D, GridState, ScalarWaveState, h1xl2_distance, state_distance
from .hum import HumProblem, hum_control
from .sphere import renormalize
from .states import perturbed_state


@dataclass
class IterateRecord:
    k: int
    residual: float
    contraction: float | None
    control_norm: float
    wall_time: float

    COLUMNS = ("k", "residual", "contraction", "control_norm", "wall_time")

    def row(self) -> list:
        return [self.k, self.residual, self.contraction, self.control_norm, self.wall_time]


@dataclass
class LocalControlResult:
    control: ControlField
    trajectory: list[tuple[float, GridState]]
    iterates: list[IterateRecord]
    converged: bool
    final: GridState
    problem: HumProblem
    increments: list[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.iterates[-1].residual


def _deficit(s: GridState, p: np.ndarray) -> ScalarWaveState:
    return ScalarWaveState(s.grid, s.phi - p[None, :], s.phi_t)


def _project_plane(f: ControlField, p: np.ndarray) -> ControlField:
    s = f.samples
    s = s - np.einsum("tnm,m->tn", s, p)[:, :, None] * p[None, None, :]
    return ControlField(f.grid, f.t0, f.dt, s, f.mask)


def local_null_control(u0: GridState, p, T: float = 2 * math.pi, tol_local: float = 1e-8,
                       max_iter: int = 20, omega=(-math.pi / 2, math.pi / 2),
                       n_max: int | None = None, cfl: float = 0.5,
                       propagator: str = "scheme", ridge: float = 1e-10,
                       record_every: int = 0) -> LocalControlResult:
    """Steer u0 to (p, 0) in time T with a control supported in omega.

    ``record_every`` > 0 keeps the final trajectory at that step stride;
    0 keeps only the end points.
    """
    p = renormalize(np.asarray(p, dtype=float))
    grid = u0.grid
    m = u0.k + 1
    if p.size != m:
        raise ValueError("p must live in the same R^(k+1) as the state")
    n_max = grid.n // 2 if n_max is None else n_max
    problem = HumProblem(grid, omega, T, n_max, ridge, propagator, cfl)
    n_steps, dt = problem.n_steps, problem.dt
    params = EvolveParams(t_end=T, dt=dt,
                          record_every=record_every if record_every > 0 else n_steps)
    f = ControlField.zeros(grid, 0.0, dt, n_steps, m, problem.mask)
    iterates: list[IterateRecord] = []
    increments: list[float] = []
    prev = None
    slow = 0
    t_start = time.perf_counter()
    converged = False
    ev = None
    for k in range(max_iter + 1):
        ev = evolve(u0, params, forcing=f if k > 0 else None)
        res = h1xl2_distance(ev.final, p)
        ratio = None if prev is None or prev == 0 else res / prev
        iterates.append(IterateRecord(k, res, ratio, f.norm_linf_l2(),
                                      time.perf_counter() - t_start))
        if res <= tol_local:
            converged = True
            break
        if ratio is not None:
            if ratio >= 1.0:
                raise NoContraction("residual did not decrease", iteration=k, ratio=ratio,
                                    residual=res)
            slow = slow + 1 if ratio > 0.9 else 0
            if slow >= 2:
                raise NoContraction("contraction ratio above 0.9 twice in a row",
                                    iteration=k, ratio=ratio, residual=res)
        if k == max_iter:
            break
        h = hum_control(problem, None, _deficit(ev.final, p).scaled(-1.0))
        h = _project_plane(h, p)
        increments.append(h.norm_linf_l2())
        f = f + h
        prev = res
    return LocalControlResult(f, ev.trajectory, iterates, converged, ev.final, problem,
                              increments)


@dataclass
class ExactControlResult:
    control: ControlSchedule
    mismatch: float
    forward: LocalControlResult
    backward: LocalControlResult
    final: GridState


def local_exact_control(u0: GridState, u1: GridState, p, T: float = 2 * math.pi,
                        tol_local: float = 1e-8, tol_replay: float | None = None,
                        **kw) -> ExactControlResult:
    """Control taking u0 to u1 on [0, 2T] through rest at p.

    The first half steers u0 to (p, 0); the second half is the time reversal
    of a control steering the velocity-reversed u1 to (p, 0).
    """
    tol_replay = 10.0 * tol_local if tol_replay is None else tol_replay
    fwd = local_null_control(u0, p, T=T, tol_local=tol_local, **kw)
    if not fwd.converged:
        raise NoContraction("forward leg did not converge", residual=fwd.residual)
    bwd = local_null_control(time_reverse(u1), p, T=T, tol_local=tol_local, **kw)
    if not bwd.converged:
        raise NoContraction("backward leg did not converge", residual=bwd.residual)
    control = concatenate([fwd.control, bwd.control.reversed()])
    ev = replay(u0, control)
    mismatch = state_distance(ev.final, u1)
    if mismatch > tol_replay:
        raise ReplayMismatch("replay misses the target state", mismatch=mismatch,
                             tolerance=tol_replay)
    return ExactControlResult(control, mismatch, fwd, bwd, ev.final)


# empirical radius ---------------------------------------------------------

def _probe_one(args) -> bool:
    grid_n, p, eps, seed, T, kw = args
    grid = Grid1D(grid_n)
    try:
        u0 = perturbed_state(grid, p, eps, seed)
        return local_null_control(u0, p, T=T, **kw).converged
    except (NoContraction, BlowUp, GramianIllConditioned, ValueError):
        return False


@dataclass
class ProbeResult:
    eps_tilde: float
    bracket: tuple[float, float]
    table: list[dict]


def converges_at(eps: float, p, grid: Grid1D, T: float, seeds, workers: int = 1,
                 **kw) -> bool:
    jobs = [(grid.n, np.asarray(p, dtype=float), eps, s, T, kw) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return all(pool.map(_probe_one, jobs))
    return all(_probe_one(j) for j in jobs)


def epsilon_tilde_probe(p, grid: Grid1D, T: float = 2 * math.pi, seeds=range(8),
                        lo: float = 1e-3, hi: float = 1.0, iters: int = 6,
                        workers: int = 1, **kw) -> ProbeResult:
    """Largest tested distance at which every seed converges (log bisection)."""
    p = renormalize(np.asarray(p, dtype=float))
    seeds = list(seeds)
    table = []

    def ok(eps):
        r = converges_at(eps, p, grid, T, seeds, workers, **kw)
        table.append({"eps": eps, "converged": r})
        return r

    while not ok(lo):
        hi = lo
        lo *= 0.5
        if lo < 1e-6:
            return ProbeResult(0.0, (0.0, hi), table)
    if ok(hi):
        return ProbeResult(hi, (hi, hi), table)
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return ProbeResult(lo, (lo, hi), table)
