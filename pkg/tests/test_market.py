"""Market loading, validation, broadcasting, moments, existence check."""

import json

import numpy as np
import pytest

import mvequil as mv
from mvequil import ValidationError

PRESET = "li-duan-example-2"


def test_preset_fields():
    spec = mv.get_preset(PRESET)
    assert spec.horizon == 4
    assert spec.num_assets == 3
    assert np.array_equal(spec.riskless, np.full(4, 1.04))
    assert np.allclose(spec.mean_returns, np.tile([1.162, 1.246, 1.228], (4, 1)))
    expected_cov = np.array(
        [
            [0.0146, 0.0187, 0.0145],
            [0.0187, 0.0854, 0.0104],
            [0.0145, 0.0104, 0.0289],
        ]
    )
    assert np.allclose(spec.return_cov, np.tile(expected_cov, (4, 1, 1)))
    assert spec.mu1 == 1.0 and spec.mu2 == 1.0
    assert spec.initial_time == 0 and spec.initial_wealth == 1.0
    assert spec.warnings == ()


def test_preset_excess_moments():
    spec = mv.get_preset(PRESET)
    moments = mv.derive_excess_moments(spec)
    assert np.allclose(moments.mean_excess, np.tile([0.122, 0.206, 0.188], (4, 1)))
    for k in range(4):
        outer = np.outer(moments.mean_excess[k], moments.mean_excess[k])
        assert np.allclose(moments.second_moment[k], moments.cov_excess[k] + outer)
        assert np.allclose(moments.cov_excess[k], spec.return_cov[k])


def test_unknown_preset():
    with pytest.raises(ValidationError, match="unknown preset"):
        mv.get_preset("no-such-market")


def test_broadcasting_scalars_and_single_stage():
    spec = mv.make_market_spec(
        horizon=3,
        num_assets=2,
        riskless=1.05,
        mean_returns=[1.1, 1.2],
        return_cov=[[0.04, 0.0], [0.0, 0.09]],
        mu1=1.0,
        mu2=2.0,
    )
    assert spec.riskless.shape == (3,)
    assert spec.mean_returns.shape == (3, 2)
    assert spec.return_cov.shape == (3, 2, 2)
    assert np.all(spec.mean_returns == spec.mean_returns[0])


def test_round_trip_json(tmp_path):
    spec = mv.make_market_spec(
        horizon=2,
        num_assets=2,
        riskless=[1.02, 1.03],
        mean_returns=[[1.1, 1.15], [1.12, 1.09]],
        return_cov=[[[0.05, 0.01], [0.01, 0.03]], [[0.06, 0.0], [0.0, 0.02]]],
        mu1=0.7,
        mu2=1.3,
        initial_time=0,
        initial_wealth=2.5,
    )
    path = tmp_path / "market.json"
    mv.dump_market_spec(spec, path)
    loaded = mv.load_market_spec(path)
    assert loaded.horizon == spec.horizon
    assert loaded.num_assets == spec.num_assets
    assert np.array_equal(loaded.riskless, spec.riskless)
    assert np.array_equal(loaded.mean_returns, spec.mean_returns)
    assert np.array_equal(loaded.return_cov, spec.return_cov)
    assert loaded.mu1 == spec.mu1 and loaded.mu2 == spec.mu2
    assert loaded.initial_time == spec.initial_time
    assert loaded.initial_wealth == spec.initial_wealth
    # a second dump of the loaded spec is byte-identical
    assert mv.dump_market_spec(loaded) == mv.dump_market_spec(spec)


def test_load_from_dict_stream_and_text(tmp_path):
    raw = {
        "horizon": 2,
        "num_assets": 1,
        "riskless": 1.01,
        "mean_returns": [1.08],
        "return_cov": [[0.02]],
        "mu1": 1.0,
        "mu2": 1.0,
    }
    from_dict = mv.load_market_spec(raw)
    from_text = mv.load_market_spec(json.dumps(raw))
    path = tmp_path / "m.json"
    path.write_text(json.dumps(raw))
    with open(path) as fh:
        from_stream = mv.load_market_spec(fh)
    for spec in (from_dict, from_text, from_stream):
        assert spec.horizon == 2
        assert spec.mean_returns.shape == (2, 1)


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"horizon": 0}, "horizon must be >= 1"),
        ({"num_assets": 0}, "num_assets must be >= 1"),
        ({"mu1": 0.0}, "mu1 must be positive"),
        ({"mu2": -1.0}, "mu2 must be positive"),
        ({"initial_time": 5}, "initial_time must be in"),
        ({"riskless": [1.0, 1.0, 1.0]}, "riskless must be a scalar or length-2"),
        ({"riskless": -1.0}, "riskless return must be positive at stage 0"),
        ({"return_cov": [[0.02, 0.0], [0.001, 0.02]]}, "not symmetric at stage 0"),
        ({"return_cov": [[0.02, 0.05], [0.05, 0.02]]}, "not PSD at stage 0"),
        ({"mean_returns": [1.1, 1.2, 1.3]}, "mean_returns"),
    ],
)
def test_validation_errors(patch, message):
    base = dict(
        horizon=2,
        num_assets=2,
        riskless=1.02,
        mean_returns=[1.1, 1.2],
        return_cov=[[0.02, 0.0], [0.0, 0.02]],
        mu1=1.0,
        mu2=1.0,
    )
    base.update(patch)
    with pytest.raises(ValidationError, match=message):
        mv.make_market_spec(**base)


def test_stage_specific_psd_failure():
    good = [[0.02, 0.0], [0.0, 0.02]]
    bad = [[0.02, 0.05], [0.05, 0.02]]  # negative eigenvalue
    with pytest.raises(ValidationError, match="not PSD at stage 1"):
        mv.make_market_spec(
            horizon=2,
            num_assets=2,
            riskless=1.02,
            mean_returns=[1.1, 1.2],
            return_cov=[good, bad],
            mu1=1.0,
            mu2=1.0,
        )


def test_riskless_below_one_warns_but_loads():
    spec = mv.make_market_spec(
        horizon=2,
        num_assets=1,
        riskless=[0.99, 1.02],
        mean_returns=[1.05],
        return_cov=[[0.01]],
        mu1=1.0,
        mu2=1.0,
    )
    assert len(spec.warnings) == 1
    assert "stage 0" in spec.warnings[0]


def test_zero_excess_moments():
    spec = mv.make_market_spec(
        horizon=2,
        num_assets=2,
        riskless=1.03,
        mean_returns=[1.03, 1.03],
        return_cov=[[0.01, 0.0], [0.0, 0.01]],
        mu1=1.0,
        mu2=1.0,
    )
    moments = mv.derive_excess_moments(spec)
    assert np.array_equal(moments.mean_excess, np.zeros((2, 2)))
    assert np.array_equal(moments.second_moment, moments.cov_excess)


def test_single_asset_moments():
    spec = mv.make_market_spec(
        horizon=1,
        num_assets=1,
        riskless=1.0,
        mean_returns=[1.1],
        return_cov=[[0.04]],
        mu1=1.0,
        mu2=1.0,
    )
    moments = mv.derive_excess_moments(spec)
    assert moments.mean_excess[0, 0] == pytest.approx(0.1)
    assert moments.second_moment[0, 0, 0] == pytest.approx(0.04 + 0.01)


def test_existence_check_preset_and_degenerate():
    preset_moments = mv.derive_excess_moments(mv.get_preset(PRESET))
    report = mv.check_open_loop_existence(preset_moments)
    assert report.overall
    assert all(report.per_stage)

    spec = mv.make_market_spec(
        horizon=2,
        num_assets=2,
        riskless=1.0,
        mean_returns=[1.0, 1.1],  # excess (0, 0.1) outside Ran(diag(1, 0))
        return_cov=[[1.0, 0.0], [0.0, 0.0]],
        mu1=1.0,
        mu2=1.0,
    )
    report = mv.check_open_loop_existence(mv.derive_excess_moments(spec))
    assert not report.overall
    assert list(report.per_stage) == [False, False]
    assert all(r > 0.05 for r in report.residual_norms)


def test_with_initial_state():
    spec = mv.get_preset(PRESET)
    moved = mv.with_initial_state(spec, t=2, x=3.0)
    assert moved.initial_time == 2 and moved.initial_wealth == 3.0
    assert np.array_equal(moved.return_cov, spec.return_cov)
    with pytest.raises(ValidationError):
        mv.with_initial_state(spec, t=4)
    with pytest.raises(ValidationError):
        mv.with_initial_state(spec, x=float("nan"))


def test_resolve_market_prefers_preset(tmp_path):
    assert mv.resolve_market(PRESET).horizon == 4
    with pytest.raises(ValidationError, match="cannot read market JSON"):
        mv.resolve_market(str(tmp_path / "missing.json"))
