"""Measured functionals of recorded wave-map runs.

Every function here is a pure function of a recorded trajectory (a list of
``(t, GridState)`` pairs or an ``Evolution``) and never re-runs the solver.
Time integrals use the exact integral of the piecewise-linear interpolant of
the samples, which reduces to the trapezoid rule when the window ends fall
on sample times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveEnergy, WindowNotCovered
from .evolver import DampingProfile
from .grid import centered_diff, energy, laplacian

_TIME_TOL = 1e-9


# trajectories -------------------------------------------------------------

def _unpack(traj):
    pairs = traj.trajectory if hasattr(traj, "trajectory") else traj
    if not pairs:
        raise ValueError("empty trajectory")
    times = np.array([t for t, _ in pairs], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("trajectory times must increase")
    states = [s for _, s in pairs]
    return times, states


def _window_weights(times: np.ndarray, w0: float, w1: float) -> np.ndarray:
    """Weights q with sum q_i f(t_i) = integral over [w0, w1] of the linear
    interpolant of f."""
    if w0 < times[0] - _TIME_TOL or w1 > times[-1] + _TIME_TOL or w1 < w0:
        raise WindowNotCovered("trajectory does not cover the window",
                               window=[w0, w1], covered=[float(times[0]), float(times[-1])])
    q = np.zeros(times.size)
    for i in range(times.size - 1):
        t0, t1 = times[i], times[i + 1]
        a, b = max(t0, w0), min(t1, w1)
        if b <= a:
            continue
        h = t1 - t0
        # integral of (t1 - t)/h and (t - t0)/h over [a, b]
        q[i] += ((t1 - a) ** 2 - (t1 - b) ** 2) / (2.0 * h)
        q[i + 1] += ((b - t0) ** 2 - (a - t0) ** 2) / (2.0 * h)
    return q


# cutoffs ------------------------------------------------------------------

def smooth_step(s) -> np.ndarray:
    """C-infinity profile: 1 on [0, 1/2], 0 on [1, inf), even in s."""
    s = np.abs(np.asarray(s, dtype=float))
    out = np.zeros_like(s)
    out[s <= 0.5] = 1.0
    mid = (s > 0.5) & (s < 1.0)
    if np.any(mid):
        g1 = np.exp(-1.0 / (1.0 - s[mid]))
        g2 = np.exp(-1.0 / (s[mid] - 0.5))
        out[mid] = g1 / (g1 + g2)
    return out


@dataclass(frozen=True)
class CutoffSpec:
    """Window equal to ``scale`` on [alpha, beta], ramping to 0 over tau on
    each side; support is (alpha - tau, beta + tau)."""

    alpha: float
    beta: float
    tau: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.alpha < self.beta:
            raise ValueError("cutoff needs alpha < beta")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("ramp width tau must lie in (0, 1)")

    @property
    def support(self) -> tuple[float, float]:
        return (self.alpha - self.tau, self.beta + self.tau)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        d = np.maximum(self.alpha - t, 0.0) + np.maximum(t - self.beta, 0.0)
        return self.scale * smooth_step(0.5 + 0.5 * d / self.tau)

    def integral(self, samples: int = 20001) -> float:
        lo, hi = self.support
        t = np.linspace(lo, hi, samples)
        return float(np.trapezoid(self(t), t))

    def normalized(self) -> "CutoffSpec":
        c = CutoffSpec(self.alpha, self.beta, self.tau)
        return CutoffSpec(self.alpha, self.beta, self.tau, 1.0 / c.integral())


def psi_cutoff(tau: float = 0.5, t_end: float = 3 * math.pi) -> CutoffSpec:
    """Unit-mass averaging window supported in (0, t_end)."""
    return CutoffSpec(tau, t_end - tau, tau).normalized()


# observability ------------------------------------------------------------

@dataclass
class ObservabilityReport:
    lhs: float
    rhs: float
    ratio: float
    window: tuple[float, float]
    per_x: np.ndarray

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio,
                "window": list(self.window), "per_x_max": float(np.max(self.per_x)),
                "per_x_min": float(np.min(self.per_x))}


def observability_ratio(traj, damping: DampingProfile | None, window=None) -> ObservabilityReport:
    """E(window start) against the observed dissipation over the window."""
    times, states = _unpack(traj)
    w0, w1 = (times[0], times[-1]) if window is None else window
    q = _window_weights(times, w0, w1)
    dx = states[0].grid.dx
    a = np.zeros(states[0].grid.n) if damping is None else damping.a
    i0 = int(np.argmin(np.abs(times - w0)))
    if abs(times[i0] - w0) > _TIME_TOL:
        raise WindowNotCovered("window must start at a recorded time", window=[w0, w1])
    lhs = energy(states[i0])
    rhs = 0.0
    per_x = np.zeros(states[0].grid.n)
    for qi, s in zip(q, states):
        if qi == 0.0:
            continue
        v2 = np.sum(s.phi_t ** 2, axis=1)
        rhs += qi * dx * float(np.sum(a * v2))
        per_x += qi * v2
    ratio = rhs / lhs if lhs > 0 else 0.0
    return ObservabilityReport(lhs, rhs, ratio, (float(w0), float(w1)), np.sqrt(per_x))


def linf_l2_velocity(traj, window=(0.0, 3 * math.pi)) -> float:
    """max over x of the time integral of |phi_t|^2 over the window."""
    times, states = _unpack(traj)
    q = _window_weights(times, *window)
    acc = np.zeros(states[0].grid.n)
    for qi, s in zip(q, states):
        if qi:
            acc += qi * np.sum(s.phi_t ** 2, axis=1)
    return float(np.max(acc))


# windowed negative-order norm ---------------------------------------------

def hminus1_window_norm(times, values, cutoff: CutoffSpec | None = None,
                        pad_factor: int = 4) -> float:
    """L^2_t norm of <d_t>^{-1}(cutoff * signal).

    ``values`` has time along axis 0; extra axes are vector components.
    With ``cutoff=None`` the window is the indicator of the sampled span.
    """
    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    vals = vals.reshape(vals.shape[0], -1)
    if times.size < 2:
        raise WindowNotCovered("need at least two samples")
    dt = float(times[1] - times[0])
    if np.max(np.abs(np.diff(times) - dt)) > 1e-9 * max(1.0, abs(dt)):
        raise ValueError("samples must lie on a uniform time grid")
    if cutoff is None:
        g = vals
    else:
        lo, hi = cutoff.support
        if lo < times[0] - _TIME_TOL or hi > times[-1] + _TIME_TOL:
            raise WindowNotCovered("series does not cover the cutoff support",
                                   support=[lo, hi],
                                   covered=[float(times[0]), float(times[-1])])
        g = cutoff(times)[:, None] * vals
    m = pad_factor * g.shape[0]
    gh = np.fft.fft(g, n=m, axis=0)
    lam = 2.0 * math.pi * np.fft.fftfreq(m, d=dt)
    w = 1.0 / (1.0 + lam ** 2)
    return math.sqrt(dt / m * float(np.sum(w[:, None] * np.abs(gh) ** 2)))


# time-averaged map --------------------------------------------------------

def averaged_map_residual(traj, psi: CutoffSpec | None = None) -> tuple[np.ndarray, float]:
    """psi-average of phi over time and the sup of |L avg + (E(0)/2pi) avg|.

    The discrete weights are renormalized to total mass one, so a
    time-constant trajectory averages to itself exactly.
    """
    times, states = _unpack(traj)
    psi = psi_cutoff() if psi is None else psi
    lo, hi = psi.support
    q = _window_weights(times, lo, hi) * psi(times)
    mass = float(np.sum(q))
    if mass <= 0:
        raise WindowNotCovered("averaging window carries no mass on the samples")
    q = q / mass
    tilde = np.zeros_like(states[0].phi)
    for qi, s in zip(q, states):
        if qi:
            tilde += qi * s.phi
    e0 = energy(states[0])
    dx = states[0].grid.dx
    r = laplacian(tilde, dx) + (e0 / (2.0 * math.pi)) * tilde
    return tilde, float(np.max(np.linalg.norm(r, axis=1)))


# null coordinates ---------------------------------------------------------

def null_coordinate_energies(traj) -> dict:
    """Measured sizes of phi_u = (phi_t + phi_x)/2, phi_v = (phi_t - phi_x)/2.

    Each entry is divided by E(0); all vanish when E(0) = 0.
    """
    times, states = _unpack(traj)
    grid = states[0].grid
    dx = grid.dx
    q = _window_weights(times, times[0], times[-1])
    e = np.array([energy(s) for s in states])
    e0 = e[0]
    l2 = 0.0
    uv = 0.0
    per_x = np.zeros(grid.n)
    for qi, s in zip(q, states):
        px = centered_diff(s.phi, dx)
        pu = 0.5 * (s.phi_t + px)
        pv = 0.5 * (s.phi_t - px)
        dens = np.sum(s.phi_t ** 2 + px ** 2 + pu ** 2 + pv ** 2, axis=1)
        l2 += qi * dx * float(np.sum(dens))
        uv += qi * dx * float(np.sum(np.sum(pu * pv, axis=1) ** 2))
        per_x += qi * np.sum(s.phi_t ** 2 + px ** 2, axis=1)
    out = {"E0": float(e0), "t0": float(times[0]), "t1": float(times[-1])}
    if e0 <= 0:
        out.update(es1=0.0, es1_min=0.0, es2=0.0, es3=0.0, es4=0.0)
        return out
    out.update(es1=float(np.max(e) / e0), es1_min=float(np.min(e) / e0),
               es2=l2 / e0, es3=float(np.max(per_x)) / e0, es4=math.sqrt(uv) / e0)
    return out


# decay fits ---------------------------------------------------------------

def fit_exponential_decay(t, E, tail_fraction: float = 0.5,
                          pin_amplitude: bool = False) -> tuple[float, float, float]:
    """Least-squares fit E ~ C exp(-c t) on the last ``tail_fraction`` of the
    series. Returns (C, c, r^2).

    With ``pin_amplitude`` the fit is E ~ E(t_0) exp(-c (t - t_0)) over the
    whole series, so any initial delay lowers c instead of inflating C.
    """
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if t.size != E.size:
        raise ValueError("t and E must have the same length")
    if t.size < 8:
        raise ValueError("need at least 8 samples for a decay fit")
    if np.any(~(E > 0)):
        raise NonPositiveEnergy("decay fit needs strictly positive energies",
                                minimum=float(np.min(E)))
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    if pin_amplitude:
        tt = t - t[0]
        y = np.log(E / E[0])
        c = -float(tt @ y) / float(tt @ tt)
        resid = y + c * tt
        C = float(E[0] * math.exp(c * t[0]))
    else:
        start = min(t.size - 2, int(math.floor((1.0 - tail_fraction) * t.size)))
        tt, y = t[start:], np.log(E[start:])
        A = np.column_stack([np.ones_like(tt), tt])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        C, c = float(math.exp(coef[0])), float(-coef[1])
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-24 * y.size else 1.0 - ss_res / ss_tot
    return C, c, float(r2)
