"""Linear wave equation y_tt = y_xx - a(x) y_t + 1_omega f on the circle.

``evolve_linear`` is the finite-difference solver; it uses the same grid
stencil and the same split damping as the wave-map evolver. The ``oracle_*``
functions work purely on Fourier coefficients and never touch the stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BlowUp, DegenerateProbe
from .evolver import DampingProfile
from .grid import Grid1D, ScalarWaveState, forward_diff, laplacian, linear_energy


def evolve_linear(s: ScalarWaveState, T: float, damping: DampingProfile | None = None,
                  forcing=None, cfl: float = 0.5, dt: float | None = None,
                  t_start: float = 0.0, observer: Callable | None = None) -> ScalarWaveState:
    """Verlet solution at time t_start + T.

    ``observer(n, t, y, y_t)`` is called after every step (and at n = 0).
    """
    grid = s.grid
    dx = grid.dx
    if T == 0:
        return s
    if dt is None:
        n_steps = max(1, math.ceil(T / (cfl * dx) - 1e-9))
    else:
        n_steps = round(T / dt)
        if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError("T must be a whole number of steps of dt")
    dt = T / n_steps
    half = 0.5 * dt
    a = None if damping is None or not np.any(damping.a) else damping.a[:, None]
    y, v = np.array(s.y), np.array(s.y_t)
    if observer is not None:
        observer(0, t_start, y, v)
    for i in range(n_steps):
        t = t_start + i * dt
        acc = laplacian(y, dx)
        if a is not None:
            acc = acc - a * v
        if forcing is not None:
            f0 = forcing.at(t, "right")
            if f0 is not None:
                acc = acc + f0
        vh = v + half * acc
        y = y + dt * vh
        w = vh + half * laplacian(y, dx)
        if forcing is not None:
            f1 = forcing.at(t + dt, "left")
            if f1 is not None:
                w = w + half * f1
        v = w if a is None else w / (1.0 + half * a)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v))):
            raise BlowUp("linear solution became non-finite", time=t + dt)
        if observer is not None:
            observer(i + 1, t + dt, y, v)
    return ScalarWaveState(grid, y, v)


# Fourier oracle -----------------------------------------------------------

@dataclass(frozen=True)
class ModeCoeffs:
    """Coefficients of y(x) = sum_n c_n e^{inx} for n = -n_max..n_max.

    Arrays have shape (2*n_max + 1, m); row i holds wavenumber i - n_max.
    """

    y: np.ndarray
    y_t: np.ndarray

    @property
    def n_max(self) -> int:
        return (self.y.shape[0] - 1) // 2

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    @classmethod
    def from_state(cls, s: ScalarWaveState, n_max: int | None = None) -> "ModeCoeffs":
        n = s.grid.n
        n_max = n // 2 if n_max is None else n_max
        if n_max > n // 2:
            raise ValueError("n_max cannot exceed n/2")
        return cls(_coeffs(s.y, n_max), _coeffs(s.y_t, n_max))

    def to_state(self, grid: Grid1D) -> ScalarWaveState:
        return ScalarWaveState(grid, _synth(self.y, grid), _synth(self.y_t, grid))

    def energy(self) -> np.ndarray:
        """Continuum energy per component of the trigonometric interpolant."""
        n = self.wavenumbers[:, None].astype(float)
        return 2.0 * math.pi * np.sum(n ** 2 * np.abs(self.y) ** 2 + np.abs(self.y_t) ** 2, axis=0)

    def sym_gap(self) -> float:
        """Deviation from conjugate symmetry c_{-n} = conj(c_n)."""
        return float(max(np.max(np.abs(self.y - np.conj(self.y[::-1]))),
                         np.max(np.abs(self.y_t - np.conj(self.y_t[::-1])))))


def _coeffs(u: np.ndarray, n_max: int) -> np.ndarray:
    n = u.shape[0]
    c = np.fft.fft(u, axis=0) / n
    idx = np.arange(-n_max, n_max + 1) % n
    out = c[idx]
    if 2 * n_max == n:
        # the Nyquist coefficient is shared between +n/2 and -n/2
        out[0] *= 0.5
        out[-1] = np.conj(out[0])
    return out


def _synth(c: np.ndarray, grid: Grid1D) -> np.ndarray:
    n_max = (c.shape[0] - 1) // 2
    ks = np.arange(-n_max, n_max + 1)
    phase = np.exp(1j * np.outer(grid.x, ks))
    return np.real(phase @ c)


def oracle_free_wave(m: ModeCoeffs, T: float) -> ModeCoeffs:
    n = m.wavenumbers[:, None].astype(float)
    w = np.abs(n)
    c = np.cos(w * T)
    s = np.sin(w * T)
    safe = np.where(w > 0, w, 1.0)
    sinc_t = np.where(w > 0, s / safe, T)
    y = m.y * c + m.y_t * sinc_t
    y_t = -m.y * w * s + m.y_t * c
    return ModeCoeffs(y, y_t)


def gauss_legendre_nodes(t0: float, t1: float, panels: int, order: int = 16):
    """Composite Gauss-Legendre nodes and weights on [t0, t1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(t0, t1, panels + 1)
    h = np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + 0.5 * h[:, None] * x[None, :]).ravel()
    weights = (0.5 * h[:, None] * w[None, :]).ravel()
    return nodes, weights


def oracle_forced(grid: Grid1D, y0: ScalarWaveState | None, T: float,
                  forcing: Callable[[float], np.ndarray], m: int,
                  panels: int | None = None, order: int = 16,
                  n_max: int | None = None) -> ModeCoeffs:
    """Exact-in-modes solution at T of y_tt = y_xx + F(t, x) on the grid modes.

    ``forcing(t)`` returns the (n, m) forcing sampled on the grid at time t.
    Each mode of the Duhamel integral is evaluated by composite
    Gauss-Legendre quadrature, so for smooth F the time error is at
    round-off level.
    """
    n = grid.n
    n_max = n // 2 if n_max is None else n_max
    if y0 is None:
        y0 = ScalarWaveState.zeros(grid, m)
    free = oracle_free_wave(ModeCoeffs.from_state(y0, n_max), T)
    if panels is None:
        panels = max(8, int(math.ceil(T)) * 4)
    nodes, weights = gauss_legendre_nodes(0.0, T, panels, order)
    ks = np.abs(np.arange(-n_max, n_max + 1)).astype(float)[:, None]
    safe = np.where(ks > 0, ks, 1.0)
    acc_y = np.zeros((2 * n_max + 1, m), dtype=complex)
    acc_v = np.zeros_like(acc_y)
    for s, wq in zip(nodes, weights):
        fh = _coeffs(np.asarray(forcing(s), dtype=float).reshape(n, m), n_max)
        tau = T - s
        ky = np.where(ks > 0, np.sin(ks * tau) / safe, tau)
        acc_y += wq * ky * fh
        acc_v += wq * np.cos(ks * tau) * fh
    return ModeCoeffs(free.y + acc_y, free.y_t + acc_v)


# damped decay -------------------------------------------------------------

@dataclass(frozen=True)
class DecayEstimate:
    J_T: float
    ratios: np.ndarray
    energies0: np.ndarray
    T: float


def random_linear_data(grid: Grid1D, m: int, seed: int, modes: int = 8) -> ScalarWaveState:
    rng = np.random.default_rng(seed)
    x = grid.x
    y = np.zeros((grid.n, m))
    v = np.zeros((grid.n, m))
    for q in range(1, modes + 1):
        for arr, scale in ((y, 1.0 / q), (v, 1.0)):
            arr += (np.outer(np.cos(q * x), rng.standard_normal(m))
                    + np.outer(np.sin(q * x), rng.standard_normal(m))) * scale / q
    v += rng.standard_normal(m)[None, :] * 0.3
    return ScalarWaveState(grid, y, v)


def decay_rate_damped(damping: DampingProfile, T: float = 16 * math.pi,
                      probes: ScalarWaveState | None = None, n_probes: int = 32,
                      seed: int = 0, cfl: float = 0.5) -> DecayEstimate:
    """Smallest measured 2*int int a y_t^2 / E_1(0) over the probe columns."""
    grid = damping.grid
    if probes is None:
        probes = random_linear_data(grid, n_probes, seed)
    dx = grid.dx
    e0 = dx * (np.sum(probes.y_t ** 2, axis=0) + np.sum(forward_diff(probes.y, dx) ** 2, axis=0))
    live = e0 >= 1e-14
    if not np.any(live):
        raise DegenerateProbe("every probe has (numerically) zero energy")
    a = damping.a[:, None]
    state = {"prev": None, "acc": np.zeros(probes.m), "dt": None, "t": None}

    def observe(i, t, y, v):
        q = dx * np.sum(a * v * v, axis=0)
        if state["prev"] is not None:
            state["acc"] += 0.5 * (t - state["t"]) * (state["prev"] + q)
        state["prev"] = q
        state["t"] = t

    evolve_linear(probes, T, damping=damping, cfl=cfl, observer=observe)
    ratios = np.full(probes.m, np.nan)
    ratios[live] = 2.0 * state["acc"][live] / e0[live]
    return DecayEstimate(float(np.nanmin(ratios)), ratios, e0, T)


def free_dispersion(y0: ScalarWaveState, T: float, cfl: float = 0.5,
                    dt: float | None = None) -> float:
    """Relative energy-norm gap between the FD and exact free evolutions of y0."""
    grid = y0.grid
    fd = evolve_linear(y0, T, cfl=cfl, dt=dt)
    exact = oracle_free_wave(ModeCoeffs.from_state(y0), T).to_state(grid)
    diff = ScalarWaveState(grid, fd.y - exact.y, fd.y_t - exact.y_t)
    e0 = float(np.sum(linear_energy(y0)))
    return math.sqrt(float(np.sum(linear_energy(diff))) / e0) if e0 > 0 else 0.0
