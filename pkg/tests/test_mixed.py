"""Mixed equilibrium solver: strategy part chosen, open-loop part solved."""

import json

import numpy as np
import pytest

import mvequil as mv
from mvequil import NonexistenceReport, PureFeedbackPart
from mvequil.reference import (
    MIXED_GAINS,
    MIXED_LAST_GAIN_EIGENVALUES,
    MIXED_OFFSETS,
    MIXED_STRATEGY,
)

from instgen import random_market

PRESET = "li-duan-example-2"


@pytest.fixture(scope="module")
def preset_mixed():
    spec = mv.get_preset(PRESET)
    sol = mv.solve_mixed(spec, PureFeedbackPart(gains=MIXED_STRATEGY), cross_check=True)
    return spec, sol


def test_golden_table(preset_mixed):
    _, sol = preset_mixed
    assert np.max(np.abs(sol.policy.gains - MIXED_GAINS)) < 5e-4
    assert np.max(np.abs(sol.policy.offsets - MIXED_OFFSETS)) < 5e-4


def test_golden_last_stage_gain_eigenvalues(preset_mixed):
    spec, sol = preset_mixed
    eigs = np.sort(sol.trace.gain_eigenvalues[spec.horizon - 1])
    assert np.max(np.abs(eigs - MIXED_LAST_GAIN_EIGENVALUES)) < 5e-4


def test_zero_strategy_reduces_to_open_loop():
    cases = [mv.get_preset(PRESET)]
    cases += [random_market(seed, max_horizon=5, max_assets=4) for seed in range(25)]
    for spec in cases:
        open_loop = mv.solve_open_loop(spec)
        mixed = mv.solve_mixed(spec, mv.zero_pure_feedback(spec.horizon, spec.num_assets))
        assert not isinstance(mixed, NonexistenceReport)
        assert np.max(np.abs(mixed.policy.gains - open_loop.policy.gains)) <= 1e-10
        assert np.max(np.abs(mixed.policy.offsets - open_loop.policy.offsets)) <= 1e-10


def test_cross_checked_shift_recursions_agree_on_random_strategies():
    spec = mv.get_preset(PRESET)
    for seed in range(6):
        phi = mv.sample_pure_feedback(seed, spec.horizon, spec.num_assets)
        sol = mv.solve_mixed(spec, phi, cross_check=True)
        assert not isinstance(sol, NonexistenceReport)


def test_last_stage_independent_of_strategy():
    spec = mv.get_preset(PRESET)
    sols = [
        mv.solve_mixed(spec, mv.sample_pure_feedback(seed, spec.horizon, spec.num_assets))
        for seed in (1, 2)
    ]
    last = spec.horizon - 1
    assert np.allclose(sols[0].trace.gain_matrix[last], sols[1].trace.gain_matrix[last], atol=1e-15)
    assert np.allclose(sols[0].policy.gain(last), sols[1].policy.gain(last), atol=1e-15)
    open_loop = mv.solve_open_loop(spec)
    assert np.allclose(sols[0].policy.gain(last), open_loop.policy.gain(last), atol=1e-12)


def test_sampling_is_deterministic():
    a = mv.sample_pure_feedback(5, 4, 3)
    b = mv.sample_pure_feedback(5, 4, 3)
    assert np.array_equal(a.gains, b.gains)
    assert a.seed == 5
    c = mv.sample_pure_feedback(6, 4, 3)
    assert not np.array_equal(a.gains, c.gains)


def test_load_pure_feedback(tmp_path):
    rows = [[0.1, -0.2], [0.0, 0.3], [1.0, 0.0]]
    path = tmp_path / "phi.json"
    path.write_text(json.dumps(rows))
    part = mv.load_pure_feedback(path, horizon=3, num_assets=2)
    assert np.array_equal(part.gains, np.asarray(rows))
    with pytest.raises(ValueError, match="shape"):
        mv.load_pure_feedback(path, horizon=2, num_assets=2)


def test_frozen_gains_decomposition(preset_mixed):
    _, sol = preset_mixed
    assert np.allclose(sol.frozen_gains, sol.policy.gains - sol.feedback_part.gains, atol=1e-15)


def test_mean_wealth_path_matches_open_loop_for_zero_strategy():
    spec = mv.get_preset(PRESET)
    mixed = mv.solve_mixed(spec, mv.zero_pure_feedback(spec.horizon, spec.num_assets))
    open_loop = mv.solve_open_loop(spec)
    assert np.allclose(
        mv.mixed_equilibrium_wealth_mean(mixed, spec),
        mv.mean_wealth_path(open_loop, spec),
        atol=1e-10,
    )


def test_strategy_shape_is_validated():
    spec = mv.get_preset(PRESET)
    with pytest.raises(ValueError, match="shape"):
        mv.solve_mixed(spec, PureFeedbackPart(gains=np.zeros((2, 3))))


def test_trace_csv_has_one_row_per_stage(preset_mixed):
    spec, sol = preset_mixed
    lines = mv.mixed_trace_csv(sol, spec).strip().splitlines()
    assert len(lines) == 5
    header = lines[0].split(",")
    assert "strategy_0" in header and "gain_eig_2" in header


def test_applied_policy_kind(preset_mixed):
    _, sol = preset_mixed
    assert sol.policy.kind is mv.PolicyKind.MIXED_APPLIED
    assert sol.trace.psd_ok.all()
    assert sol.trace.stage_ok.all()
