"""Uniform periodic grid on S^1, state containers, discrete norms.

Spatial derivatives use the compact forward difference
``(u[j+1] - u[j]) / dx``, which sits at the cell midpoints, and its adjoint.
Their composition is the 3-point Laplacian used by both evolvers, so the
semi-discrete energy ``dx * sum(|v|^2 + |D u|^2)`` is conserved exactly by
the spatially discretized flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidState

UNIT_TOL = 1e-8


@dataclass(frozen=True)
class Grid1D:
    n: int

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 64 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= 64, got {n!r}")
        object.__setattr__(self, "n", int(n))

    @property
    def dx(self) -> float:
        return 2.0 * math.pi / self.n

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    def mask(self, interval: tuple[float, float] | None) -> np.ndarray:
        """Boolean indicator of grid points strictly inside an arc.

        The arc runs counter-clockwise from ``lo`` to ``hi``; ``None`` means
        the whole circle.
        """
        if interval is None:
            return np.ones(self.n, dtype=bool)
        lo, hi = interval
        width = hi - lo
        if width <= 0:
            raise ValueError("interval must have lo < hi")
        if width >= 2.0 * math.pi:
            return np.ones(self.n, dtype=bool)
        rel = (self.x - lo) % (2.0 * math.pi)
        return (rel > 1e-12) & (rel < width - 1e-12)


# stencil ------------------------------------------------------------------

def forward_diff(u: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(u, -1, axis=0) - u) / dx


def laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(u, -1, axis=0) - 2.0 * u + np.roll(u, 1, axis=0)) / (dx * dx)


def node_grad_sq(u: np.ndarray, dx: float) -> np.ndarray:
    """|u_x|^2 at the nodes: average of the two adjacent midpoint values."""
    g = np.sum(forward_diff(u, dx) ** 2, axis=1)
    return 0.5 * (g + np.roll(g, 1))


def centered_diff(u: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2.0 * dx)


# states -------------------------------------------------------------------

@dataclass(frozen=True)
class GridState:
    """Sampled wave-map state (phi, phi_t) with rows on the unit sphere."""

    grid: Grid1D
    phi: np.ndarray
    phi_t: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        phi_t = np.array(self.phi_t, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != self.grid.n or phi.shape[1] < 2:
            raise InvalidState(f"phi must have shape (n, k+1) with n={self.grid.n}, k>=1")
        if phi_t.shape != phi.shape:
            raise InvalidState("phi_t must have the same shape as phi")
        phi.setflags(write=False)
        phi_t.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi_t", phi_t)
        if self.check:
            if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(phi_t))):
                raise InvalidState("state has non-finite entries")
            if self.constraint_violation() > UNIT_TOL:
                raise InvalidState("phi leaves the unit sphere",
                                   violation=self.constraint_violation())
            if self.tangency_violation() > UNIT_TOL:
                raise InvalidState("phi_t is not tangent to the sphere",
                                   violation=self.tangency_violation())

    @property
    def k(self) -> int:
        return self.phi.shape[1] - 1

    def constraint_violation(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.phi, axis=1) - 1.0)))

    def tangency_violation(self) -> float:
        return float(np.max(np.abs(np.sum(self.phi * self.phi_t, axis=1))))


@dataclass(frozen=True)
class ScalarWaveState:
    """State (y, y_t) of the linear wave equation with m components."""

    grid: Grid1D
    y: np.ndarray
    y_t: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        y_t = np.array(self.y_t, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y_t.ndim == 1:
            y_t = y_t[:, None]
        if y.shape[0] != self.grid.n or y.shape != y_t.shape:
            raise InvalidState("y and y_t must both have shape (n, m)")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_t))):
            raise InvalidState("linear state has non-finite entries")
        y.setflags(write=False)
        y_t.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_t", y_t)

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @classmethod
    def zeros(cls, grid: Grid1D, m: int = 1) -> "ScalarWaveState":
        z = np.zeros((grid.n, m))
        return cls(grid, z, z)

    def __add__(self, other: "ScalarWaveState") -> "ScalarWaveState":
        return ScalarWaveState(self.grid, self.y + other.y, self.y_t + other.y_t)

    def __sub__(self, other: "ScalarWaveState") -> "ScalarWaveState":
        return ScalarWaveState(self.grid, self.y - other.y, self.y_t - other.y_t)

    def scaled(self, c: float) -> "ScalarWaveState":
        return ScalarWaveState(self.grid, c * self.y, c * self.y_t)


# norms --------------------------------------------------------------------

def energy(s: GridState) -> float:
    dx = s.grid.dx
    return float(dx * (np.sum(s.phi_t ** 2) + np.sum(forward_diff(s.phi, dx) ** 2)))


def linear_energy(s: ScalarWaveState) -> np.ndarray:
    """Per-component discrete energy of a linear state."""
    dx = s.grid.dx
    return dx * (np.sum(s.y_t ** 2, axis=0) + np.sum(forward_diff(s.y, dx) ** 2, axis=0))


def _pair_norm(grid: Grid1D, y: np.ndarray, d: np.ndarray, v: np.ndarray, full: bool) -> float:
    dx = grid.dx
    total = np.sum(forward_diff(d, dx) ** 2) + np.sum(v ** 2)
    if full:
        total += np.sum(y ** 2)
    return float(math.sqrt(dx * total))


def h1xl2_distance(s: GridState, p: np.ndarray) -> float:
    """Discrete H^1 x L^2 distance from s to the constant rest state (p, 0)."""
    return _pair_norm(s.grid, s.phi - p, s.phi, s.phi_t, True)


def hdot1_distance(s: GridState, p: np.ndarray | None = None) -> float:
    """Homogeneous variant: the constant offset from p is not counted."""
    return _pair_norm(s.grid, s.phi, s.phi, s.phi_t, False)


def state_distance(a: GridState, b: GridState) -> float:
    """Discrete H^1 x L^2 norm of the difference of two states."""
    d = a.phi - b.phi
    return _pair_norm(a.grid, d, d, a.phi_t - b.phi_t, True)


def linear_norm(s: ScalarWaveState) -> float:
    """Discrete H^1 x L^2 norm of a linear state, all components together."""
    return _pair_norm(s.grid, s.y, s.y, s.y_t, True)


def concentration_radius(s: GridState, p: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(s.phi - p, axis=1)))
