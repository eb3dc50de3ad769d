import math

import numpy as np
import pytest

from wmlab.errors import DegenerateProbe
from wmlab.evolver import make_bump_damping
from wmlab.grid import Grid1D, ScalarWaveState, linear_energy
from wmlab.linear_wave import (ModeCoeffs, decay_rate_damped, evolve_linear,
                               gauss_legendre_nodes, oracle_forced, oracle_free_wave,
                               random_linear_data)


def test_mode_round_trip(g64):
    s = random_linear_data(g64, 3, seed=2, modes=8)
    back = ModeCoeffs.from_state(s).to_state(g64)
    np.testing.assert_allclose(back.y, s.y, atol=1e-12)
    np.testing.assert_allclose(back.y_t, s.y_t, atol=1e-12)


def test_oracle_single_mode(g64):
    x = g64.x
    s = ScalarWaveState(g64, np.cos(3 * x), np.zeros(64))
    out = oracle_free_wave(ModeCoeffs.from_state(s), 0.7).to_state(g64)
    np.testing.assert_allclose(out.y[:, 0], math.cos(2.1) * np.cos(3 * x), atol=1e-12)
    # mean mode moves linearly
    s = ScalarWaveState(g64, np.zeros(64), np.ones(64))
    out = oracle_free_wave(ModeCoeffs.from_state(s), 2.0).to_state(g64)
    np.testing.assert_allclose(out.y[:, 0], 2.0, atol=1e-12)


def test_free_scheme_second_order():
    errs = []
    for n in (128, 256):
        g = Grid1D(n)
        x = g.x
        s = ScalarWaveState(g, np.sin(2 * x), np.cos(3 * x))
        fd = evolve_linear(s, 2 * math.pi, cfl=0.5)
        ex = oracle_free_wave(ModeCoeffs.from_state(s), 2 * math.pi).to_state(g)
        errs.append(np.max(np.abs(fd.y - ex.y)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_free_energy_bounded(g128):
    s = random_linear_data(g128, 2, seed=0)
    fd = evolve_linear(s, 10.0)
    e0, e1 = linear_energy(s), linear_energy(fd)
    np.testing.assert_allclose(e1, e0, rtol=1e-3)


def test_gauss_legendre_exact_for_polynomials():
    t, w = gauss_legendre_nodes(0.0, 2.0, 3, order=4)
    assert abs(np.sum(w * t ** 7) - 2.0 ** 8 / 8) < 1e-11


def test_oracle_forced_matches_duhamel(g64):
    # y_tt = y_xx + cos(x) has y = (1 - cos t) cos x from rest
    x = g64.x
    out = oracle_forced(g64, None, 1.3, lambda t: np.cos(x)[:, None], 1)
    y = out.to_state(g64).y[:, 0]
    np.testing.assert_allclose(y, (1 - math.cos(1.3)) * np.cos(x), atol=1e-13)


def test_damped_decay_rate_positive(g128):
    d = make_bump_damping(g128)
    est = decay_rate_damped(d, T=4 * math.pi, n_probes=6)
    assert 0 < est.J_T <= 1.0 + 1e-6
    zero = ScalarWaveState.zeros(g128, 2)
    with pytest.raises(DegenerateProbe):
        decay_rate_damped(d, probes=zero)
