import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wmlab.errors import AntipodalPair, NearZeroVector, UnresolvedCurve
from wmlab.sphere import (basis_point, geodesic_chain, harmonic_map_Q, project_tangent,
                          renormalize, winding_number)

finite = st.floats(-10, 10, allow_nan=False)


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_projection_is_tangent_and_idempotent(f, p):
    if np.linalg.norm(p) < 1e-3:
        return
    p = renormalize(p)
    g = project_tangent(f, p)
    assert abs(g @ p) <= 1e-12 * (1 + np.linalg.norm(f))
    np.testing.assert_allclose(project_tangent(g, p), g, atol=1e-12)


def test_projection_rowwise():
    phi = harmonic_map_Q(np.linspace(0, 1, 5), 2)
    f = np.ones((5, 3))
    g = project_tangent(f, phi)
    np.testing.assert_allclose(np.sum(g * phi, axis=1), 0, atol=1e-15)


def test_renormalize_rejects_tiny():
    np.testing.assert_allclose(renormalize([3.0, 4.0]), [0.6, 0.8])
    with pytest.raises(NearZeroVector):
        renormalize([1e-9, 0.0])
    with pytest.raises(NearZeroVector):
        renormalize([[1.0, 0.0], [0.0, 0.0]])


def test_harmonic_map_values():
    q = harmonic_map_Q(np.array([0.0, math.pi / 2]), 3)
    np.testing.assert_allclose(q, [[1, 0, 0, 0], [0, 1, 0, 0]], atol=1e-15)
    with pytest.raises(ValueError):
        harmonic_map_Q(0.0, 0)


@settings(max_examples=50)
@given(st.floats(0.0, 3.0), st.floats(0.05, 2.0))
def test_geodesic_chain_spacing(theta, step):
    p = basis_point(2)
    q = np.array([math.cos(theta), math.sin(theta), 0.0])
    chain = geodesic_chain(p, q, step)
    np.testing.assert_allclose(chain[0], p)
    np.testing.assert_allclose(chain[-1], q, atol=1e-12)
    chords = [np.linalg.norm(b - a) for a, b in zip(chain, chain[1:])]
    assert all(c <= step + 1e-12 for c in chords)
    # equal hops along the great circle
    if len(chords) > 1:
        assert max(chords) - min(chords) < 1e-9
    for c in chain:
        assert abs(np.linalg.norm(c) - 1) < 1e-14
        assert abs(c[2]) < 1e-14


def test_geodesic_chain_minimal_count():
    p, q = basis_point(2, 0), basis_point(2, 1)
    # quarter circle of angle pi/2 with chord 0.5 per hop
    n = math.ceil((math.pi / 2) / (2 * math.asin(0.25)))
    assert len(geodesic_chain(p, q, 0.5)) == n + 1
    assert len(geodesic_chain(p, p, 0.5)) == 1


def test_geodesic_chain_errors():
    p = basis_point(2)
    with pytest.raises(AntipodalPair):
        geodesic_chain(p, -p, 0.5)
    with pytest.raises(ValueError):
        geodesic_chain(p, basis_point(2, 1), 0.0)


@pytest.mark.parametrize("d", [-2, -1, 0, 1, 3])
def test_winding_of_multiple_covers(d):
    x = np.arange(128) * 2 * math.pi / 128
    phi = np.column_stack([np.cos(d * x + 0.3), np.sin(d * x + 0.3)])
    assert winding_number(phi) == d


def test_winding_rejects_coarse_curve():
    x = np.arange(8) * 2 * math.pi / 8
    phi = np.column_stack([np.cos(3 * x), np.sin(3 * x)])
    with pytest.raises(UnresolvedCurve):
        winding_number(phi)
    with pytest.raises(ValueError):
        winding_number(np.zeros((5, 3)))
