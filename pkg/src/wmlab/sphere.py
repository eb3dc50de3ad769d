"""Geometry of the unit sphere S^k sitting in R^(k+1).

Points and tangent vectors are plain numpy arrays. Functions accept a single
vector of shape ``(k+1,)`` or a stack of shape ``(n, k+1)`` and act row-wise.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AntipodalPair, NearZeroVector, UnresolvedCurve

RENORM_FLOOR = 1e-8


def project_tangent(f: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Remove the component of ``f`` along the unit vector ``phi``."""
    f = np.asarray(f, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return f - np.sum(f * phi, axis=-1, keepdims=True) * phi


def renormalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(~np.isfinite(norm)) or np.any(norm < RENORM_FLOOR):
        raise NearZeroVector("cannot renormalize a vector of norm below 1e-8",
                             min_norm=float(np.min(norm)))
    return v / norm


def harmonic_map_Q(x, k: int) -> np.ndarray:
    """The equatorial circle (cos x, sin x, 0, ..., 0) in R^(k+1)."""
    if k < 1:
        raise ValueError("target dimension k must be >= 1")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (k + 1,))
    out[..., 0] = np.cos(x)
    out[..., 1] = np.sin(x)
    return out


def basis_point(k: int, axis: int = 0) -> np.ndarray:
    p = np.zeros(k + 1)
    p[axis] = 1.0
    return p


def geodesic_chain(p: np.ndarray, q: np.ndarray, step: float) -> list[np.ndarray]:
    """Points along the minimizing great circle from p to q.

    Consecutive chords are at most ``step`` and the hops are equal in angle.
    """
    if not 0.0 < step <= 2.0:
        raise ValueError("step must lie in (0, 2]")
    p = renormalize(p)
    q = renormalize(q)
    c = float(np.dot(p, q))
    if c <= -1.0 + 1e-10:
        raise AntipodalPair("endpoints are antipodal; perturb one of them")
    if np.array_equal(p, q):
        return [p]
    theta = math.acos(min(1.0, c))
    hop = 2.0 * math.asin(step / 2.0)
    n_hops = max(1, math.ceil(theta / hop - 1e-12))
    # unit tangent at p pointing toward q
    w = q - c * p
    w_norm = np.linalg.norm(w)
    if w_norm == 0.0:
        return [p]
    w = w / w_norm
    chain = [p]
    for i in range(1, n_hops):
        s = theta * i / n_hops
        chain.append(renormalize(math.cos(s) * p + math.sin(s) * w))
    chain.append(q)
    return chain


def winding_number(phi: np.ndarray) -> int:
    """Degree of a closed sampled curve in S^1 (rows are points in R^2).

    The closing segment from the last sample back to the first is included.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[1] != 2:
        raise ValueError("winding number needs an (N, 2) array of circle points")
    ang = np.arctan2(phi[:, 1], phi[:, 0])
    jumps = np.diff(np.append(ang, ang[0]))
    jumps = (jumps + np.pi) % (2.0 * np.pi) - np.pi
    if np.any(np.abs(jumps) >= np.pi / 2):
        j = int(np.argmax(np.abs(jumps)))
        raise UnresolvedCurve("angular jump of at least pi/2 between samples",
                              index=j, jump=float(jumps[j]))
    return int(round(float(np.sum(jumps)) / (2.0 * np.pi)))
