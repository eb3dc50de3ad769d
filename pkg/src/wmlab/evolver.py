"""Time integration of damped and internally controlled wave maps into S^k.

The equation solved is

    phi_tt = phi_xx + (|phi_x|^2 - |phi_t|^2) phi - a(x) phi_t + P(phi) (1_omega f)

with P(phi) the tangent projection at phi. The default step is a
velocity-Verlet scheme whose position update solves the pointwise sphere
constraint exactly (a RATTLE-type multiplier) and whose velocity is
projected onto the tangent plane. It is time-reversible: stepping from
(phi1, -v1) with damping replaced by anti-damping returns (phi, -v). The
damping term is split symmetrically, half explicit, half implicit.

``constraint="project"`` switches to plain post-step renormalization with
tangent projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUp, ProfileTooWeak, UnresolvedCurve
from .grid import Grid1D, GridState, energy, laplacian, node_grad_sq
from .sphere import winding_number

BLOWUP_DRIFT = 0.1


# damping ------------------------------------------------------------------

@dataclass(frozen=True)
class DampingProfile:
    grid: Grid1D
    a: np.ndarray
    omega: tuple[float, float] | None = None
    omega0: tuple[float, float] | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.shape != (self.grid.n,):
            raise ValueError("damping array must have one value per grid point")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("damping must be finite and nonnegative")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @classmethod
    def constant(cls, grid: Grid1D, alpha: float) -> "DampingProfile":
        return cls(grid, np.full(grid.n, float(alpha)))

    @classmethod
    def none(cls, grid: Grid1D) -> "DampingProfile":
        return cls(grid, np.zeros(grid.n))

    @property
    def mask(self) -> np.ndarray:
        if self.omega is None:
            return self.a > 0
        return self.grid.mask(self.omega)


def bump_profile(r: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - r^2)) on |r| < 1, zero elsewhere; equals 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def make_bump_damping(grid: Grid1D, omega=(-math.pi / 2, math.pi / 2),
                      omega0=(-math.pi / 4, math.pi / 4),
                      amplitude: float = 2.0) -> DampingProfile:
    lo, hi = omega
    lo0, hi0 = omega0
    if not lo < lo0 < hi0 < hi:
        raise ValueError("omega0 must lie strictly inside omega")
    if hi - lo > 2.0 * math.pi:
        raise ValueError("omega must be a proper arc of the circle")
    if amplitude < 1.0:
        raise ValueError("amplitude must be at least 1")
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    # signed offset from the arc center, measured around the circle
    d = (grid.x - center + math.pi) % (2.0 * math.pi) - math.pi
    a = amplitude * bump_profile(d / half)
    inner = (lo0 - center, hi0 - center)
    # the bump decreases away from the center, so its minimum over omega0
    # is at the endpoint farther from the center
    r_far = max(abs(inner[0]), abs(inner[1])) / half
    weakest = amplitude * float(bump_profile(np.array([r_far]))[0])
    if weakest < 1.0:
        raise ProfileTooWeak("damping falls below 1 inside omega0",
                             minimum=weakest)
    on_inner = grid.mask(omega0)
    if np.any(on_inner) and float(np.min(a[on_inner])) < 1.0:
        raise ProfileTooWeak("damping falls below 1 at a grid point of omega0",
                             minimum=float(np.min(a[on_inner])))
    return DampingProfile(grid, a, tuple(omega), tuple(omega0))


# controls -----------------------------------------------------------------

@dataclass(frozen=True)
class ControlField:
    """Control sampled at times t0 + i*dt, i = 0..steps, linear in between.

    Samples are stored already multiplied by the omega mask.
    """

    grid: Grid1D
    t0: float
    dt: float
    samples: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        m = np.array(self.mask, dtype=bool)
        if s.ndim != 3 or s.shape[1] != self.grid.n or s.shape[0] < 2:
            raise ValueError("samples must have shape (steps+1, n, m) with steps >= 1")
        if m.shape != (self.grid.n,):
            raise ValueError("mask must have one entry per grid point")
        if not np.all(np.isfinite(s)):
            raise ValueError("control samples must be finite")
        if self.dt <= 0:
            raise ValueError("control time step must be positive")
        s = s * m[None, :, None]
        s.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "mask", m)

    @property
    def steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def t1(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def m(self) -> int:
        return self.samples.shape[2]

    @property
    def dt_ctrl(self) -> float:
        return self.dt

    @property
    def segments(self) -> list["ControlField"]:
        return [self]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @classmethod
    def zeros(cls, grid: Grid1D, t0: float, dt: float, steps: int, m: int,
              mask: np.ndarray | None = None) -> "ControlField":
        mask = np.ones(grid.n, dtype=bool) if mask is None else mask
        return cls(grid, t0, dt, np.zeros((steps + 1, grid.n, m)), mask)

    def at(self, t: float, side: str = "right") -> np.ndarray | None:
        """Value at time t; None outside [t0, t1]. ``side`` is ignored for a
        single segment (it matters at the joints of a schedule)."""
        s = (t - self.t0) / self.dt
        steps = self.steps
        if s < -1e-9 or s > steps + 1e-9:
            return None
        i = round(s)
        if abs(s - i) <= 1e-9:
            return self.samples[min(max(i, 0), steps)]
        i0 = min(int(math.floor(s)), steps - 1)
        w = s - i0
        return (1.0 - w) * self.samples[i0] + w * self.samples[i0 + 1]

    def shifted(self, t0: float) -> "ControlField":
        return ControlField(self.grid, t0, self.dt, self.samples, self.mask)

    def reversed(self) -> "ControlField":
        """Time-reversed control on the same span: g(t) = f(t0 + t1 - t)."""
        return ControlField(self.grid, self.t0, self.dt, self.samples[::-1], self.mask)

    def __add__(self, other: "ControlField") -> "ControlField":
        if (other.steps != self.steps or abs(other.dt - self.dt) > 1e-15
                or abs(other.t0 - self.t0) > 1e-12 or other.m != self.m):
            raise ValueError("controls must share the time grid to be added")
        return ControlField(self.grid, self.t0, self.dt, self.samples + other.samples,
                            self.mask | other.mask)

    def scaled(self, c: float) -> "ControlField":
        return ControlField(self.grid, self.t0, self.dt, c * self.samples, self.mask)

    def l2x_series(self) -> np.ndarray:
        """||f(t_i)||_{L^2_x} at every sample time."""
        return np.sqrt(self.grid.dx * np.sum(self.samples ** 2, axis=(1, 2)))

    def norm_linf_l2(self) -> float:
        return float(np.max(self.l2x_series()))

    def norm_l1_l2(self) -> float:
        return float(np.trapezoid(self.l2x_series(), dx=self.dt))

    def norm_l2(self) -> float:
        sq = self.grid.dx * np.sum(self.samples ** 2, axis=(1, 2))
        return float(math.sqrt(np.trapezoid(sq, dx=self.dt)))


class ControlSchedule:
    """Contiguous concatenation of control segments.

    At a joint ``at(t, "right")`` uses the later segment and
    ``at(t, "left")`` the earlier one, so a step that starts at the joint
    sees the new segment and a step that ends there sees the old one.
    """

    def __init__(self, segments: Sequence[ControlField]):
        segs: list[ControlField] = []
        for s in segments:
            segs.extend(s.segments)
        if not segs:
            raise ValueError("a schedule needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            if abs(a.t1 - b.t0) > 1e-9 * max(1.0, abs(a.t1)):
                raise ValueError("schedule segments must be contiguous in time")
        self._segs = segs
        self._starts = np.array([s.t0 for s in segs])

    @property
    def grid(self) -> Grid1D:
        return self._segs[0].grid

    @property
    def segments(self) -> list[ControlField]:
        return list(self._segs)

    @property
    def t0(self) -> float:
        return self._segs[0].t0

    @property
    def t1(self) -> float:
        return self._segs[-1].t1

    @property
    def m(self) -> int:
        return self._segs[0].m

    def at(self, t: float, side: str = "right") -> np.ndarray | None:
        tol = 1e-9
        for i, seg in enumerate(self._segs):
            last = i == len(self._segs) - 1
            if side == "right":
                if seg.t0 - tol <= t < seg.t1 - tol or (last and abs(t - seg.t1) <= tol):
                    return seg.at(t)
            else:
                first = i == 0
                if seg.t0 + tol < t <= seg.t1 + tol or (first and abs(t - seg.t0) <= tol):
                    return seg.at(t)
        return None

    def norm_linf_l2(self) -> float:
        return max(s.norm_linf_l2() for s in self._segs)

    def norm_l1_l2(self) -> float:
        return sum(s.norm_l1_l2() for s in self._segs)

    def norm_l2(self) -> float:
        return math.sqrt(sum(s.norm_l2() ** 2 for s in self._segs))


def concatenate(parts: Sequence[ControlField | ControlSchedule]) -> ControlSchedule:
    """Chain controls end to end, shifting each to start where the last ended."""
    segs: list[ControlField] = []
    t = None
    for part in parts:
        for seg in part.segments:
            if t is None:
                t = seg.t0
            segs.append(seg.shifted(t))
            t = segs[-1].t1
    return ControlSchedule(segs)


# stepping -----------------------------------------------------------------

@dataclass(frozen=True)
class EvolveParams:
    t_end: float
    cfl: float = 0.5
    record_every: int = 1
    renormalize: bool = True
    constraint: str = "rattle"
    dt: float | None = None

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive step count")
        if self.constraint not in ("rattle", "project"):
            raise ValueError("constraint must be 'rattle' or 'project'")

    def time_grid(self, grid: Grid1D) -> tuple[int, float]:
        """Number of steps and step size covering [0, t_end] exactly."""
        if self.t_end == 0:
            return 0, self.dt or self.cfl * grid.dx
        if self.dt is not None:
            n = round(self.t_end / self.dt)
            if n < 1 or abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
                raise ValueError("t_end must be a whole number of steps of dt")
            if self.dt > grid.dx + 1e-12:
                raise ValueError("dt violates the CFL bound dt <= dx")
            return n, self.t_end / n
        n = max(1, math.ceil(self.t_end / (self.cfl * grid.dx) - 1e-9))
        return n, self.t_end / n


def _rattle_step(phi, v, dt, dx, a, f0, f1, renorm, constraint):
    half = 0.5 * dt
    coef = node_grad_sq(phi, dx) - np.sum(v * v, axis=1)
    acc = laplacian(phi, dx) + coef[:, None] * phi
    if a is not None:
        acc -= a[:, None] * v
    if f0 is not None:
        acc += f0 - np.sum(f0 * phi, axis=1, keepdims=True) * phi
    vh = v + half * acc
    u = phi + dt * vh
    uu = np.sum(u * u, axis=1)
    drift = float(np.max(np.abs(np.sqrt(uu) - 1.0)))
    if not math.isfinite(drift) or drift > BLOWUP_DRIFT:
        return None, None, drift
    if constraint == "rattle":
        b = np.sum(u * phi, axis=1)
        disc = b * b - uu + 1.0
        if np.any(disc < 0):
            return None, None, drift
        s = np.sqrt(disc) - b
        phi1 = u + s[:, None] * phi
        vh = vh + (s / dt)[:, None] * phi
    else:
        phi1 = u
    if renorm or constraint == "project":
        phi1 = phi1 / np.linalg.norm(phi1, axis=1, keepdims=True)
    w = vh + half * laplacian(phi1, dx)
    if f1 is not None:
        w += half * (f1 - np.sum(f1 * phi1, axis=1, keepdims=True) * phi1)
    v1 = w - np.sum(w * phi1, axis=1, keepdims=True) * phi1
    if a is not None:
        v1 = v1 / (1.0 + half * a)[:, None]
    return phi1, v1, drift


def step_wave_map(s: GridState, dt: float, damping: DampingProfile | None = None,
                  forcing=None, t: float = 0.0, renormalize: bool = True,
                  constraint: str = "rattle", cfl: float = 1.0) -> GridState:
    if dt > cfl * s.grid.dx * (1 + 1e-12):
        raise ValueError("dt exceeds cfl * dx")
    a = None if damping is None else damping.a
    f0 = f1 = None
    if forcing is not None:
        f0 = forcing.at(t, "right")
        f1 = forcing.at(t + dt, "left")
    phi1, v1, drift = _rattle_step(s.phi, s.phi_t, dt, s.grid.dx, a, f0, f1,
                                   renormalize, constraint)
    if phi1 is None or not (np.all(np.isfinite(phi1)) and np.all(np.isfinite(v1))):
        raise BlowUp("sphere constraint broke down", time=t + dt, drift=drift)
    return GridState(s.grid, phi1, v1, check=False)


# records ------------------------------------------------------------------

@dataclass
class RunRecord:
    t: list[float] = field(default_factory=list)
    E: list[float] = field(default_factory=list)
    dissipation_cumulative: list[float] = field(default_factory=list)
    constraint_violation_max: list[float] = field(default_factory=list)
    tangency_violation_max: list[float] = field(default_factory=list)
    winding: list[float] | None = None
    max_step_drift: float = 0.0
    dt: float = 0.0
    steps: int = 0

    COLUMNS = ("t", "E", "dissipation_cumulative", "constraint_violation_max",
               "tangency_violation_max")

    def columns(self) -> list[str]:
        cols = list(self.COLUMNS)
        if self.winding is not None:
            cols.append("winding")
        return cols

    def rows(self) -> list[list[float]]:
        cols = [self.t, self.E, self.dissipation_cumulative,
                self.constraint_violation_max, self.tangency_violation_max]
        if self.winding is not None:
            cols.append(self.winding)
        return [list(r) for r in zip(*cols)]

    def append(self, t: float, s: GridState, diss: float):
        self.t.append(t)
        self.E.append(energy(s))
        self.dissipation_cumulative.append(diss)
        self.constraint_violation_max.append(s.constraint_violation())
        self.tangency_violation_max.append(s.tangency_violation())
        if s.k == 1:
            if self.winding is None:
                self.winding = []
            try:
                self.winding.append(float(winding_number(s.phi)))
            except UnresolvedCurve:
                self.winding.append(float("nan"))


@dataclass
class Evolution:
    trajectory: list[tuple[float, GridState]]
    record: RunRecord
    final: GridState
    t_final: float
    control: ControlField | None = None

    def __iter__(self):
        # lets callers unpack ``trajectory, record = evolve(...)``
        return iter((self.trajectory, self.record))


def evolve(s0: GridState, params: EvolveParams, damping: DampingProfile | None = None,
           forcing=None, t_start: float = 0.0, record_damping_control: bool = False,
           keep_trajectory: bool = True,
           stop: Callable[[float, GridState], bool] | None = None) -> Evolution:
    """March ``s0`` over [t_start, t_start + t_end].

    ``stop`` is consulted at every recorded time and ends the run early when
    it returns True. With ``record_damping_control`` the damping force
    -a*phi_t is sampled at every step and returned as a ControlField;
    replaying it undamped reproduces this run.
    """
    grid = s0.grid
    dx = grid.dx
    n_steps, dt = params.time_grid(grid)
    a = None if damping is None or not np.any(damping.a) else damping.a
    phi, v = np.array(s0.phi), np.array(s0.phi_t)
    rec = RunRecord(dt=dt)
    traj: list[tuple[float, GridState]] = []
    diss = 0.0
    q_prev = 0.0 if a is None else dx * float(np.sum(a[:, None] * v * v))
    ctrl = [-(a[:, None] * v)] if (record_damping_control and a is not None) else None
    rec.append(t_start, s0, 0.0)
    if keep_trajectory:
        traj.append((t_start, s0))
    state = s0
    t = t_start
    done = 0
    stopped = stop is not None and stop(t_start, s0)
    while done < n_steps and not stopped:
        t = t_start + done * dt
        f0 = f1 = None
        if forcing is not None:
            f0 = forcing.at(t, "right")
            f1 = forcing.at(t + dt, "left")
        phi1, v1, drift = _rattle_step(phi, v, dt, dx, a, f0, f1,
                                       params.renormalize, params.constraint)
        if phi1 is None or not (np.all(np.isfinite(phi1)) and np.all(np.isfinite(v1))):
            raise BlowUp("sphere constraint broke down", time=t + dt, drift=drift)
        rec.max_step_drift = max(rec.max_step_drift, drift)
        phi, v = phi1, v1
        done += 1
        t = t_start + done * dt
        if a is not None:
            q = dx * float(np.sum(a[:, None] * v * v))
            diss += 0.5 * dt * (q_prev + q)
            q_prev = q
            if ctrl is not None:
                ctrl.append(-(a[:, None] * v))
        if done % params.record_every == 0 or done == n_steps:
            state = GridState(grid, phi, v, check=False)
            rec.append(t, state, diss)
            if keep_trajectory:
                traj.append((t, state))
            if stop is not None and stop(t, state):
                stopped = True
    state = GridState(grid, phi, v, check=False)
    rec.steps = done
    control = None
    if record_damping_control:
        mask = damping.mask if damping is not None else np.zeros(grid.n, dtype=bool)
        if ctrl is None:
            ctrl = [np.zeros_like(phi)] * (done + 1)
        if done >= 1:
            control = ControlField(grid, t_start, dt, np.array(ctrl), mask)
    return Evolution(traj, rec, state, t, control)


def time_reverse(s: GridState) -> GridState:
    return GridState(s.grid, s.phi, -s.phi_t, check=False)


def replay(s0: GridState, control, t_start: float | None = None, record_every: int = 1,
           renormalize: bool = True, constraint: str = "rattle",
           keep_trajectory: bool = False) -> Evolution:
    """Undamped evolution driven by ``control``, one step per control sample."""
    segs = control.segments
    state = s0
    traj: list[tuple[float, GridState]] = []
    rec = RunRecord()
    for seg in segs:
        params = EvolveParams(t_end=seg.t1 - seg.t0, dt=seg.dt, record_every=record_every,
                              renormalize=renormalize, constraint=constraint)
        ev = evolve(state, params, forcing=seg, t_start=seg.t0,
                    keep_trajectory=keep_trajectory)
        first = 0 if not rec.t else 1
        for name in ("t", "E", "dissipation_cumulative", "constraint_violation_max",
                     "tangency_violation_max"):
            getattr(rec, name).extend(getattr(ev.record, name)[first:])
        if ev.record.winding is not None:
            rec.winding = (rec.winding or []) + ev.record.winding[first:]
        rec.max_step_drift = max(rec.max_step_drift, ev.record.max_step_drift)
        rec.steps += ev.record.steps
        traj.extend(ev.trajectory[first if traj else 0:])
        state = ev.final
    return Evolution(traj, rec, state, segs[-1].t1)
