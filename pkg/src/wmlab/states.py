"""Initial data families: rest states, the harmonic map, latitude circles,
and seeded random smooth data scaled to a prescribed energy or distance."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from .grid import Grid1D, GridState, forward_diff, h1xl2_distance
from .sphere import basis_point, harmonic_map_Q, project_tangent, renormalize


def rest_state(grid: Grid1D, p: np.ndarray) -> GridState:
    p = renormalize(np.asarray(p, dtype=float))
    phi = np.tile(p, (grid.n, 1))
    return GridState(grid, phi, np.zeros_like(phi))


def harmonic_state(grid: Grid1D, k: int) -> GridState:
    phi = harmonic_map_Q(grid.x, k)
    return GridState(grid, phi, np.zeros_like(phi))


def latitude_state(grid: Grid1D, k: int, e0: float) -> GridState:
    """Static latitude circle of continuum energy ``e0``.

    The circle sits at polar angle theta with 2*pi*sin(theta)^2 = e0, so
    e0 = 2*pi gives the equator, which is exactly the harmonic map.
    """
    if k < 2:
        raise ValueError("latitude circles need k >= 2")
    if not 0.0 <= e0 <= 2.0 * math.pi + 1e-12:
        raise ValueError("latitude energy must lie in [0, 2*pi]")
    r = math.sqrt(min(1.0, e0 / (2.0 * math.pi)))
    x = grid.x
    phi = np.zeros((grid.n, k + 1))
    phi[:, 0] = r * np.cos(x)
    phi[:, 1] = r * np.sin(x)
    phi[:, 2] = math.sqrt(max(0.0, 1.0 - r * r))
    return GridState(grid, phi, np.zeros_like(phi))


def _smooth_field(rng: np.random.Generator, grid: Grid1D, dim: int, modes: int) -> np.ndarray:
    x = grid.x
    out = np.zeros((grid.n, dim))
    for m in range(1, modes + 1):
        a = rng.standard_normal(dim)
        b = rng.standard_normal(dim)
        out += (np.outer(np.cos(m * x), a) + np.outer(np.sin(m * x), b)) / m
    return out


def _exp_map(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(w, axis=1, keepdims=True)
    sinc = np.where(r > 1e-300, np.sin(r) / np.where(r > 0, r, 1.0), 1.0)
    return renormalize(np.cos(r) * p + sinc * w)


def _potential(grid: Grid1D, phi: np.ndarray) -> float:
    return float(grid.dx * np.sum(forward_diff(phi, grid.dx) ** 2))


def random_state(grid: Grid1D, k: int, e0: float, seed: int, p: np.ndarray | None = None,
                 modes: int = 4, kinetic_fraction: float = 0.5,
                 winding: int = 0) -> GridState:
    """Smooth random data with discrete energy exactly ``e0``.

    For k >= 2 (or k = 1 with winding 0) the map is exp_p of a random
    tangent field at p. For k = 1 with winding 1 the map is
    (cos, sin) of x plus a random periodic angle.
    """
    rng = np.random.default_rng(seed)
    p = basis_point(k) if p is None else renormalize(np.asarray(p, dtype=float))
    if winding not in (0, 1):
        raise ValueError("only winding 0 or 1 is supported")
    if winding == 1 and k != 1:
        raise ValueError("winding is only defined for k = 1")
    if e0 < 0:
        raise ValueError("energy must be nonnegative")
    if e0 == 0:
        return rest_state(grid, p)

    if winding == 1:
        base_angle = math.atan2(p[1], p[0])
        s = _smooth_field(rng, grid, 1, modes)[:, 0]

        def curve(alpha):
            ang = grid.x + base_angle + alpha * s
            return np.column_stack([np.cos(ang), np.sin(ang)])
        a_max = 0.9 / (np.max(np.abs(np.gradient(s, grid.dx))) + 1e-300)
    else:
        w = project_tangent(_smooth_field(rng, grid, k + 1, modes), p)

        def curve(alpha):
            return _exp_map(p, alpha * w)
        a_max = 0.9 * math.pi / np.max(np.linalg.norm(w, axis=1))

    pe_target = (1.0 - kinetic_fraction) * e0
    pe0 = _potential(grid, curve(0.0))
    if pe0 > e0:
        raise ValueError(f"energy {e0} is below the minimum {pe0} of this homotopy class")
    if pe0 >= pe_target:
        alpha = 0.0
    elif _potential(grid, curve(a_max)) <= pe_target:
        alpha = a_max
    else:
        alpha = brentq(lambda a: _potential(grid, curve(a)) - pe_target, 0.0, a_max,
                       xtol=1e-15, rtol=1e-15)
    phi = curve(alpha)
    ke_target = e0 - _potential(grid, phi)
    g = project_tangent(_smooth_field(rng, grid, k + 1, modes), phi)
    ke = grid.dx * np.sum(g ** 2)
    v = g * math.sqrt(max(ke_target, 0.0) / ke)
    return GridState(grid, phi, v)


def perturbed_state(grid: Grid1D, p: np.ndarray, eps: float, seed: int,
                    modes: int = 4) -> GridState:
    """Random smooth state at H^1 x L^2 distance exactly ``eps`` from (p, 0)."""
    p = renormalize(np.asarray(p, dtype=float))
    if eps == 0:
        return rest_state(grid, p)
    rng = np.random.default_rng(seed)
    k = p.size - 1
    w = project_tangent(_smooth_field(rng, grid, k + 1, modes), p)
    g = _smooth_field(rng, grid, k + 1, modes)

    def make(s):
        phi = _exp_map(p, s * w)
        return GridState(grid, phi, s * project_tangent(g, phi), check=False)

    def gap(s):
        return h1xl2_distance(make(s), p) - eps

    hi = 1e-3
    while gap(hi) < 0:
        hi *= 2.0
        if hi * np.max(np.linalg.norm(w, axis=1)) > 2.5:
            raise ValueError("requested distance is too large for a perturbation")
    s = brentq(gap, 0.0, hi, xtol=1e-16, rtol=1e-15)
    st = make(s)
    return GridState(grid, st.phi, st.phi_t)

