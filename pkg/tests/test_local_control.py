import math

import numpy as np
import pytest

from wmlab.errors import NoContraction
from wmlab.evolver import replay
from wmlab.grid import h1xl2_distance, state_distance
from wmlab.local_control import (epsilon_tilde_probe, local_exact_control,
                                 local_null_control)
from wmlab.sphere import basis_point, renormalize
from wmlab.states import perturbed_state, rest_state

P = basis_point(2, 2)


def test_rest_at_target_needs_nothing(g128):
    r = local_null_control(rest_state(g128, P), P)
    assert r.converged and len(r.iterates) == 1 and r.residual == 0


def test_contracts_and_control_stays_in_omega(g128):
    u0 = perturbed_state(g128, P, 1e-2, seed=0)
    r = local_null_control(u0, P, tol_local=1e-8)
    assert r.converged
    res = [it.residual for it in r.iterates]
    assert all(b <= 0.5 * a for a, b in zip(res, res[1:]))
    outside = ~g128.mask((-math.pi / 2, math.pi / 2))
    assert np.all(r.control.samples[:, outside] == 0)
    # the control has no component along p
    assert np.max(np.abs(r.control.samples @ P)) < 1e-14
    # the stored control reproduces the final state
    assert state_distance(replay(u0, r.control).final, r.final) < 1e-12
    assert h1xl2_distance(r.final, P) <= 1e-8


def test_large_data_does_not_converge(g128):
    u0 = perturbed_state(g128, P, 2.5, seed=0)
    r = local_null_control(u0, P, max_iter=5)
    assert not r.converged and r.residual > 1e-8


def test_weak_corrections_raise(g128):
    # a huge ridge shrinks every correction, so the ratio stays near 1
    u0 = perturbed_state(g128, P, 1e-2, seed=0)
    with pytest.raises(NoContraction):
        local_null_control(u0, P, ridge=1e6, max_iter=10)


def test_exact_control_between_nearby_rests(g128):
    a = basis_point(2, 0)
    b = renormalize(np.array([1.0, 0.1, 0.0]))
    mid = renormalize(a + b)
    res = local_exact_control(rest_state(g128, a), rest_state(g128, b), mid)
    assert res.mismatch <= 1e-7
    assert abs(res.control.t1 - 4 * math.pi) < 1e-9


def test_probe_brackets(g128):
    pr = epsilon_tilde_probe(P, g128, seeds=range(2), lo=0.05, hi=0.8, iters=2)
    assert pr.bracket[0] <= pr.eps_tilde <= pr.bracket[1]
    assert pr.eps_tilde >= 0.05
    assert pr.table[0]["converged"]
