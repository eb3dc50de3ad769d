import math

import numpy as np
import pytest

from wmlab.errors import GramianIllConditioned
from wmlab.grid import ScalarWaveState, linear_energy
from wmlab.hum import (HumProblem, control_cost_report, exact_time_factors, exact_time_gram,
                       get_solver, hum_solve, mode_basis, optimality_trials,
                       scheme_frequency)
from wmlab.linear_wave import (ModeCoeffs, evolve_linear, gauss_legendre_nodes,
                               oracle_forced, random_linear_data)

OMEGA = (-math.pi / 2, math.pi / 2)


def test_mode_basis_orthonormal(g64):
    B, waves, labels = mode_basis(g64, 32)
    np.testing.assert_allclose(g64.dx * B.T @ B, np.eye(B.shape[1]), atol=1e-12)
    assert B.shape[1] == 64 and labels[0] == "c0" and waves[-1] == 32


def test_scheme_frequency_limit(g256):
    w = scheme_frequency(g256, np.arange(4))
    np.testing.assert_allclose(w, np.arange(4), rtol=1e-3)


def test_exact_time_gram_against_quadrature():
    # independent oracle: Gauss-Legendre quadrature of the time factors
    freqs = np.arange(6, dtype=float)
    T = 2 * math.pi + 0.3
    t, w = gauss_legendre_nodes(0.0, T, 32, 16)
    F = exact_time_factors(freqs, T, t)
    G_num = (F * w) @ F.T
    np.testing.assert_allclose(exact_time_gram(freqs, T), G_num, atol=1e-11)


def test_problem_validation(g64):
    with pytest.raises(ValueError):
        HumProblem(g64, OMEGA, T=3.0)
    with pytest.raises(ValueError):
        HumProblem(g64, OMEGA, n_max=40)
    with pytest.raises(ValueError):
        HumProblem(g64, (1.0, 0.5))


def test_gramian_spd_and_ill_conditioned_case(g64):
    gram = get_solver(HumProblem(g64, OMEGA, n_max=8)).gramian
    np.testing.assert_allclose(gram.matrix, gram.matrix.T)
    assert gram.eigenvalues[0] > 0 and gram.condition < 1e6
    # a one-point region at x = 0 cannot see any sine mode
    with pytest.raises(GramianIllConditioned):
        get_solver(HumProblem(g64, (-0.05, 0.05), n_max=4, ridge=0.0))


def test_exact_control_hits_rest_under_oracle(g128):
    prob = HumProblem(g128, OMEGA, 2 * math.pi, n_max=16)
    y0 = random_linear_data(g128, 2, seed=3, modes=8)
    res = hum_solve(prob, y0)
    fin = oracle_forced(g128, y0, prob.T, lambda t: res.evaluate(t)[0], 2, n_max=16)
    e0 = ModeCoeffs.from_state(y0, 16).energy()
    assert np.all(fin.energy() <= 1e-12 * e0)


def test_scheme_control_exact_for_the_scheme(g64):
    # full basis: the scheme propagator reproduces the discrete solver exactly
    prob = HumProblem(g64, OMEGA, 2 * math.pi, n_max=32, propagator="scheme")
    y0 = random_linear_data(g64, 1, seed=1, modes=6)
    f = hum_solve(prob, y0).field
    fin = evolve_linear(y0, prob.T, forcing=f, dt=prob.dt)
    assert linear_energy(fin)[0] < 1e-16 * linear_energy(y0)[0]


def test_control_is_linear_in_data(g64):
    prob = HumProblem(g64, OMEGA, n_max=8)
    y0 = random_linear_data(g64, 1, seed=5, modes=8)
    a = hum_solve(prob, y0).field.samples
    b = hum_solve(prob, y0.scaled(-3.0)).field.samples
    np.testing.assert_allclose(b, -3.0 * a, atol=1e-9 * np.max(np.abs(a)))


def test_target_steering(g64):
    prob = HumProblem(g64, OMEGA, n_max=8)
    x = g64.x
    target = ScalarWaveState(g64, 0.1 * np.cos(2 * x), np.zeros(64))
    res = hum_solve(prob, None, target)
    fin = oracle_forced(g64, None, prob.T, lambda t: res.evaluate(t)[0], 1, n_max=8)
    got = fin.to_state(g64)
    np.testing.assert_allclose(got.y, target.y, atol=1e-9)


def test_out_of_band_warning(g64):
    prob = HumProblem(g64, OMEGA, n_max=2)
    y0 = ScalarWaveState(g64, np.cos(5 * g64.x), np.zeros(64))
    assert hum_solve(prob, y0).warnings


def test_cost_report_and_operator_bound(g64):
    prob = HumProblem(g64, OMEGA, n_max=8)
    samples = [random_linear_data(g64, 1, seed=s, modes=8) for s in range(3)]
    rep = control_cost_report(prob, samples)
    assert rep.operator_bound >= max(r["ratio"] for r in rep.rows) - 1e-9
    assert rep.G_T == max(rep.operator_bound, max(r["ratio"] for r in rep.rows))


def test_optimality_trials_small(g64):
    prob = HumProblem(g64, OMEGA, n_max=8)
    y0 = random_linear_data(g64, 1, seed=0, modes=8)
    rep = optimality_trials(prob, y0, trials=8)
    assert rep.passed and rep.max_null_effect < 1e-12
    assert rep.worst_relative_change > 0
    with pytest.raises(ValueError):
        optimality_trials(HumProblem(g64, OMEGA, n_max=8, propagator="scheme"), y0)
