import math

import numpy as np
import pytest

from wmlab.errors import EnergyAboveThreshold, StallDetected, WindingMismatch
from wmlab.evolver import make_bump_damping
from wmlab.grid import energy
from wmlab.pipeline import (PipelineConfig, decay_fit_run, near_harmonic_family,
                            semi_global_control, stabilize_to_small_energy, threshold_scan,
                            trend_nonincreasing)
from wmlab.sphere import basis_point
from wmlab.states import harmonic_state, random_state, rest_state


@pytest.fixture(scope="module")
def damp128():
    from wmlab.grid import Grid1D
    return make_bump_damping(Grid1D(128))


def test_stabilize_reaches_target(damp128):
    s = random_state(damp128.grid, 2, 2.0, seed=1)
    out, T1, rec = stabilize_to_small_energy(s, damp128, 1e-4)
    assert energy(out) <= 1e-4 and T1 > 0
    assert rec.t[-1] == pytest.approx(T1)


def test_stabilize_trivial_and_threshold(damp128):
    s = rest_state(damp128.grid, basis_point(2))
    res = stabilize_to_small_energy(s, damp128, 1e-4)
    assert res.T1 == 0.0
    big = random_state(damp128.grid, 2, 6.5, seed=0)
    with pytest.raises(EnergyAboveThreshold):
        stabilize_to_small_energy(big, damp128, 1e-4, nu=0.1)


def test_stall_at_harmonic_map(damp128):
    with pytest.raises(StallDetected):
        stabilize_to_small_energy(harmonic_state(damp128.grid, 2), damp128, 1e-4, t_max=200)


def test_pipeline_trivial_request(damp128):
    g = damp128.grid
    s = rest_state(g, basis_point(2))
    cfg = PipelineConfig(eps_tilde=0.4)
    r = semi_global_control(s, s, config=cfg, damping=damp128)
    assert r.mismatch == 0.0
    assert r.report["chain_points"] == 1
    assert r.control.norm_linf_l2() == 0.0


def test_pipeline_rejects_winding_and_energy(g128):
    a = random_state(g128, 1, 1.0, seed=0)
    b = random_state(g128, 1, 8.0, seed=0, winding=1)
    with pytest.raises(WindingMismatch) as exc:
        semi_global_control(a, b, config=PipelineConfig(eps_tilde=0.4))
    assert exc.value.to_dict()["winding_u1"] == 1
    big = random_state(g128, 2, 6.4, seed=0)
    small = random_state(g128, 2, 1.0, seed=0)
    with pytest.raises(EnergyAboveThreshold):
        semi_global_control(small, big, nu=0.1, config=PipelineConfig(eps_tilde=0.4))


def test_decay_fit_run(damp128):
    row = decay_fit_run(random_state(damp128.grid, 2, math.pi, seed=2), damp128, 8 * math.pi)
    assert row["c"] > 0.1 and row["r2"] > 0.95


def test_threshold_scan_small(damp128):
    nus = [math.pi, 0.0]
    rows = threshold_scan(nus, damp128, t_end=4 * math.pi)
    assert rows[0]["c"] > 0.1
    assert abs(rows[1]["c"]) < 1e-8
    assert trend_nonincreasing(rows)
    assert not trend_nonincreasing([{"E0": 1, "c": 0.1}, {"E0": 2, "c": 0.2}])


def test_family_endpoint_is_harmonic(g128):
    fam = near_harmonic_family(g128, [2 * math.pi])
    np.testing.assert_allclose(fam[0].phi, harmonic_state(g128, 2).phi)
