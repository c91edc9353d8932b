"""Acceptance gate: the eight binding criteria, one pass/fail line each.

Criterion 2 asserts the bundled feedback reference table verbatim. That table
is not a fixed point of the exact spike-deviation test on this market (see
README and tests/test_feedback.py), so a correct solver cannot reproduce its
stage 0-2 rows; the criterion is kept as stated and reports FAIL honestly.
"""

import sys
import time

import numpy as np
import pytest

import mvequil as mv
from mvequil import FailingCondition, NonexistenceReport
from mvequil.reference import (
    FEEDBACK_GAINS,
    FEEDBACK_OFFSETS,
    MIXED_GAINS,
    MIXED_LAST_GAIN_EIGENVALUES,
    MIXED_OFFSETS,
    MIXED_STRATEGY,
    OPEN_LOOP_GAINS,
)

from instgen import random_market

PRESET = "li-duan-example-2"
TOL = 5e-4


def _report(num: int, name: str, ok: bool) -> None:
    line = f"[PRIMARY {num}] {name}: {'PASS' if ok else 'FAIL'}"
    print(line)
    if sys.stdout is not sys.__stdout__:  # also reach the terminal under capture
        print(line, file=sys.__stdout__)


@pytest.fixture(scope="module")
def preset():
    return mv.get_preset(PRESET)


def test_criterion_1_open_loop_golden_table_and_runtime(preset):
    sol = mv.solve_open_loop(preset)
    gain_err = float(np.max(np.abs(sol.policy.gains - OPEN_LOOP_GAINS)))
    offset_err = float(np.max(np.abs(sol.policy.offsets - OPEN_LOOP_GAINS)))
    mv.solve_open_loop(preset)  # warm-up for the timing runs
    elapsed = min(
        (lambda t0: (mv.solve_open_loop(preset), time.perf_counter() - t0)[1])(time.perf_counter())
        for _ in range(5)
    )
    ok = gain_err < TOL and offset_err < TOL and elapsed < 0.010
    _report(1, "golden open-loop reproduction", ok)
    assert gain_err < TOL and offset_err < TOL, f"max table error {max(gain_err, offset_err):.2e}"
    assert elapsed < 0.010, f"solve took {elapsed * 1e3:.2f} ms"


def test_criterion_2_feedback_golden_table(preset):
    sol = mv.solve_feedback(preset)
    gain_err = float(np.max(np.abs(sol.policy.gains - FEEDBACK_GAINS)))
    offset_err = float(np.max(np.abs(sol.policy.offsets - FEEDBACK_OFFSETS)))
    ok = gain_err < TOL and offset_err < TOL
    _report(2, "golden feedback reproduction", ok)
    assert ok, (
        f"max deviation from the bundled feedback reference table: gains {gain_err:.2e}, "
        f"offsets {offset_err:.2e} (tolerance {TOL:g}). The bundled rows for stages 0-2 "
        "fail the exact spike-deviation test; the solver returns the oracle-confirmed "
        "table instead. See README and tests/test_feedback.py."
    )


def test_criterion_3_mixed_golden_table_and_eigenvalues(preset):
    sol = mv.solve_mixed(preset, mv.PureFeedbackPart(gains=MIXED_STRATEGY))
    gain_err = float(np.max(np.abs(sol.policy.gains - MIXED_GAINS)))
    offset_err = float(np.max(np.abs(sol.policy.offsets - MIXED_OFFSETS)))
    eigs = np.sort(sol.trace.gain_eigenvalues[preset.horizon - 1])
    eig_err = float(np.max(np.abs(eigs - MIXED_LAST_GAIN_EIGENVALUES)))
    ok = gain_err < TOL and offset_err < TOL and eig_err < TOL
    _report(3, "golden mixed reproduction", ok)
    assert ok, f"errors: gains {gain_err:.2e}, offsets {offset_err:.2e}, eigenvalues {eig_err:.2e}"


def test_criterion_4_zero_strategy_reduction(preset):
    markets = [preset] + [random_market(100 + i, max_horizon=5, max_assets=4) for i in range(25)]
    worst = 0.0
    for spec in markets:
        open_loop = mv.solve_open_loop(spec)
        mixed = mv.solve_mixed(spec, mv.zero_pure_feedback(spec.horizon, spec.num_assets))
        assert not isinstance(open_loop, NonexistenceReport)
        assert not isinstance(mixed, NonexistenceReport)
        worst = max(
            worst,
            float(np.max(np.abs(mixed.policy.gains - open_loop.policy.gains))),
            float(np.max(np.abs(mixed.policy.offsets - open_loop.policy.offsets))),
        )
    ok = worst <= 1e-10
    _report(4, "mixed(zero strategy) equals open-loop", ok)
    assert ok, f"worst componentwise difference {worst:.2e}"


def _mixed_with_solvable_strategy(spec, moments):
    for phi_seed in range(20):
        phi = mv.sample_pure_feedback(phi_seed, spec.horizon, spec.num_assets)
        sol = mv.solve_mixed(spec, phi, moments)
        if not isinstance(sol, NonexistenceReport):
            return sol
    raise AssertionError("no solvable strategy draw in 20 attempts")


def test_criterion_5_equilibrium_property_on_random_instances():
    t0 = time.time()
    markets = [random_market(200 + i, max_horizon=4, max_assets=3) for i in range(25)]
    worst_normalized_gap = float("inf")
    for spec in markets:
        moments = mv.derive_excess_moments(spec)
        tree = mv.build_matched_tree(moments)
        assert tree.leaf_count(spec.initial_time) <= 10**5
        open_loop = mv.solve_open_loop(spec, moments)
        feedback = mv.solve_feedback(spec, moments)
        mixed = _mixed_with_solvable_strategy(spec, moments)
        for target in (open_loop.policy, feedback.policy, mixed):
            reports = mv.verify_equilibrium(tree, spec, target)
            assert all(r.passed for r in reports)
            worst_normalized_gap = min(
                worst_normalized_gap,
                min(r.gap / max(1.0, abs(r.j_star)) for r in reports),
            )
    elapsed = time.time() - t0
    ok = worst_normalized_gap >= -1e-7 and elapsed < 60.0
    _report(5, "equilibrium property on 25 random instances", ok)
    assert worst_normalized_gap >= -1e-7, f"worst normalized gap {worst_normalized_gap:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.1f} s"


def test_criterion_6_degenerate_covariance_handling():
    q = np.array([1.0, 0.5, -0.25])
    cov = np.outer(0.2 * q, 0.2 * q)  # rank one by construction
    q_perp = np.array([0.5, -1.0, 0.0])
    assert abs(q @ q_perp) < 1e-15

    def build(mean_excess):
        return mv.make_market_spec(
            horizon=3,
            num_assets=3,
            riskless=1.02,
            mean_returns=1.02 + mean_excess,
            return_cov=cov,
            mu1=1.0,
            mu2=1.0,
        )

    parallel = build(0.05 * q)
    open_loop = mv.solve_open_loop(parallel)
    feedback = mv.solve_feedback(parallel)
    mixed = mv.solve_mixed(parallel, mv.zero_pure_feedback(3, 3))
    solvable = not any(
        isinstance(sol, NonexistenceReport) for sol in (open_loop, feedback, mixed)
    )

    skew = build(0.05 * q + 0.03 * q_perp)
    report = mv.solve_open_loop(skew)
    rejected = (
        isinstance(report, NonexistenceReport)
        and report.failing_condition is FailingCondition.RANGE_CONDITION
    )
    ok = solvable and rejected
    _report(6, "rank-one covariance: parallel solves, skew rejected", ok)
    assert solvable, "parallel mean excess must solve in all three solvers"
    assert rejected, f"expected a range-condition nonexistence report, got {report!r}"


def test_criterion_7_recursion_invariants(preset):
    corpus = [preset]
    corpus += [random_market(100 + i, max_horizon=5, max_assets=4) for i in range(25)]
    corpus += [random_market(200 + i, max_horizon=4, max_assets=3) for i in range(25)]
    ok = True
    details = []
    for spec in corpus:
        open_loop = mv.solve_open_loop(spec)
        if not np.all(open_loop.trace.cov_weight > 0):
            ok = False
            details.append("open-loop cov_weight not positive")
        fb = mv.solve_feedback(spec)
        covw, mow = fb.trace.cov_weight, fb.trace.mean_outer_weight
        slack = 1e-10 * np.maximum(1.0, covw)
        if not (np.all(mow >= -slack) and np.all(covw - mow >= -slack)):
            ok = False
            details.append("feedback weight ordering violated")
        eig_floor = 1e-10 * np.maximum(1.0, np.linalg.eigvalsh(spec.return_cov).max(axis=1))
        all_pd = np.all(np.linalg.eigvalsh(spec.return_cov)[:, 0] > eig_floor)
        if all_pd:
            for k in range(spec.initial_time, spec.horizon):
                if np.linalg.eigvalsh(fb.trace.gain_matrix[k])[0] <= 0:
                    ok = False
                    details.append(f"feedback gain matrix not PD at stage {k}")
    _report(7, "recursion invariants across the corpus", ok)
    assert ok, "; ".join(details)


def test_criterion_8_monte_carlo_consistency(preset):
    t0 = time.time()
    moments = mv.derive_excess_moments(preset)
    tree = mv.build_matched_tree(moments)
    sol = mv.solve_open_loop(preset, moments)
    exact = mv.evaluate_cost_exact(tree, preset, sol.policy, 0, 1.0)
    sim = mv.simulate_monte_carlo(preset, sol.policy, n_paths=10**5, seed=7, distribution=tree)
    elapsed = time.time() - t0
    deviation = abs(sim.cost - exact)
    ok = deviation <= 4 * sim.se_cost and elapsed < 10.0
    _report(8, "Monte Carlo within 4 standard errors of exact", ok)
    assert deviation <= 4 * sim.se_cost, (
        f"MC {sim.cost:.6f} vs exact {exact:.6f}, {deviation / sim.se_cost:.2f} SEs"
    )
    assert elapsed < 10.0, f"took {elapsed:.1f} s"
