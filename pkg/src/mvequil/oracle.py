"""Independent ground truth: exact tree costs, deviation tests, Monte Carlo.

Everything here avoids the solvers' recursions on purpose. Costs are exact
probability-weighted sums over finite-support product trees whose per-stage
moments match the market; equilibrium claims are checked by exactly minimizing
the one-stage spike-deviation cost, which is a quadratic in the deviation.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .linalg import DEFAULT_PSD_TOL, pseudoinverse, range_membership
from .market import ExcessMoments, MarketSpec
from .mixed import MixedSolution
from .policy import AffinePolicy, PolicyKind

MAX_LEAF_PATHS = 10**7


class EquilibriumStructureError(RuntimeError):
    """The deviation cost was not convex: solver bug or non-equilibrium policy."""


class DeviationSemantics(enum.Enum):
    """How the continuation reacts to a one-stage spike deviation.

    OPEN_LOOP freezes all later controls at their undeviated per-scenario
    realizations. FEEDBACK re-applies the affine rule to the deviated state.
    MIXED re-applies only the prescribed strategy part to the deviated state
    and freezes the remaining part per scenario.
    """

    OPEN_LOOP = "open_loop"
    FEEDBACK = "feedback"
    MIXED = "mixed"


_KIND_TO_SEMANTICS = {
    PolicyKind.OPEN_LOOP: DeviationSemantics.OPEN_LOOP,
    PolicyKind.FEEDBACK: DeviationSemantics.FEEDBACK,
    PolicyKind.MIXED_APPLIED: DeviationSemantics.MIXED,
}


@dataclass(frozen=True)
class ScenarioTree:
    """Finite-support, stagewise-independent excess-return distribution.

    probabilities[k] is a positive vector summing to one; atoms[k] is the
    matching (n_k, m) array of excess-return support points. Scenarios are
    products across stages (returns are independent between stages).
    """

    probabilities: tuple
    atoms: tuple

    def __post_init__(self):
        probs = tuple(np.asarray(p, dtype=float) for p in self.probabilities)
        atoms = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in self.atoms)
        if len(probs) != len(atoms):
            raise ValueError("probabilities and atoms must cover the same stages")
        for k, (p, a) in enumerate(zip(probs, atoms)):
            if p.ndim != 1 or a.shape[0] != p.shape[0]:
                raise ValueError(f"stage {k}: atom count does not match probability count")
            if not np.all(np.isfinite(a)) or not np.all(np.isfinite(p)):
                raise ValueError(f"stage {k}: non-finite tree data")
            if np.any(p <= 0):
                raise ValueError(f"stage {k}: probabilities must be positive")
            if abs(float(p.sum()) - 1.0) > 1e-12:
                raise ValueError(f"stage {k}: probabilities sum to {p.sum()}, not 1")
        for p, a in zip(probs, atoms):
            p.flags.writeable = False
            a.flags.writeable = False
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "atoms", atoms)

    @property
    def horizon(self) -> int:
        return len(self.atoms)

    @property
    def num_assets(self) -> int:
        return self.atoms[0].shape[1]

    def implied_mean(self, k: int) -> np.ndarray:
        return self.probabilities[k] @ self.atoms[k]

    def implied_cov(self, k: int) -> np.ndarray:
        centered = self.atoms[k] - self.implied_mean(k)
        return (centered * self.probabilities[k][:, None]).T @ centered

    def leaf_count(self, start: int = 0) -> int:
        return math.prod(len(p) for p in self.probabilities[start:])


def build_matched_tree(
    moments: ExcessMoments,
    atoms_per_stage: int | None = None,
    seed: int | None = None,
    psd_tol: float = DEFAULT_PSD_TOL,
) -> ScenarioTree:
    """Symmetric sigma-point tree matching each stage's mean and covariance.

    Per stage the covariance is factored through its eigendecomposition,
    keeping the r eigenpairs above the PSD cutoff. A budget of exactly 2r
    atoms gives the pairs mean +/- sqrt(r) * factor column with equal weights;
    a budget of 2r + 1 or more adds the mean point, keeps all weights equal
    and rescales the columns so both moments stay exact (at most 2r + 1 atoms
    are ever generated). A seed mixes the factor columns by a Haar-random
    rotation, which changes the atoms but not the matched moments. Budgets
    below the minimum (2r, or 1 for a zero covariance) raise ValueError.
    """
    N, m = moments.horizon, moments.num_assets
    if atoms_per_stage is None:
        atoms_per_stage = 2 * m + 1
    rng = np.random.default_rng(seed) if seed is not None else None
    probs = []
    atoms = []
    for k in range(N):
        mean = moments.mean_excess[k]
        cov = moments.cov_excess[k]
        w, Q = np.linalg.eigh(0.5 * (cov + cov.T))
        cutoff = psd_tol * max(1.0, float(np.max(np.abs(w)))) if w.size else 0.0
        keep = w > cutoff
        r = int(np.count_nonzero(keep))
        factor = Q[:, keep] * np.sqrt(w[keep])
        if rng is not None and r > 1:
            # Haar rotation within the range subspace; cov = F F^T is preserved
            Z = rng.standard_normal((r, r))
            Qr, Rr = np.linalg.qr(Z)
            factor = factor @ (Qr * np.sign(np.diag(Rr)))
        if r == 0:
            if atoms_per_stage < 1:
                raise ValueError(f"stage {k}: need at least 1 atom")
            probs.append(np.array([1.0]))
            atoms.append(mean[None, :].copy())
            continue
        if atoms_per_stage < 2 * r:
            raise ValueError(
                f"stage {k}: rank {r} covariance needs at least {2 * r} atoms, "
                f"got budget {atoms_per_stage}"
            )
        if atoms_per_stage == 2 * r:
            spread = math.sqrt(r) * factor.T
            pts = np.vstack([mean + spread, mean - spread])
            probs.append(np.full(2 * r, 1.0 / (2 * r)))
        else:
            spread = math.sqrt((2 * r + 1) / 2.0) * factor.T
            pts = np.vstack([mean[None, :], mean + spread, mean - spread])
            probs.append(np.full(2 * r + 1, 1.0 / (2 * r + 1)))
        atoms.append(pts)
    return ScenarioTree(probabilities=tuple(probs), atoms=tuple(atoms))


def _applied(policy) -> AffinePolicy:
    if isinstance(policy, MixedSolution):
        return policy.policy
    if isinstance(policy, AffinePolicy):
        return policy
    inner = getattr(policy, "policy", None)
    if isinstance(inner, AffinePolicy):
        return inner
    raise TypeError(f"cannot extract an affine policy from {type(policy)!r}")


def _strategy_gains(policy):
    return policy.feedback_part.gains if isinstance(policy, MixedSolution) else None


def _default_semantics(policy) -> DeviationSemantics:
    return _KIND_TO_SEMANTICS[_applied(policy).kind]


def _suffix_index(total: int, sizes: list[int], stage_pos: int) -> np.ndarray:
    stride = math.prod(sizes[stage_pos + 1 :])
    return (np.arange(total) // stride) % sizes[stage_pos]


def _check_leaf_budget(tree: ScenarioTree, start: int):
    leaves = tree.leaf_count(start)
    if leaves > MAX_LEAF_PATHS:
        raise ValueError(
            f"tree has {leaves} leaf paths from stage {start}, above the exact-evaluation "
            f"cap of {MAX_LEAF_PATHS}; use Monte Carlo instead"
        )


def _suffix_weights(tree: ScenarioTree, k: int) -> tuple[int, list[int], np.ndarray]:
    sizes = [len(p) for p in tree.probabilities[k:]]
    total = math.prod(sizes)
    weights = np.ones(total)
    for pos in range(len(sizes)):
        idx = _suffix_index(total, sizes, pos)
        weights *= tree.probabilities[k + pos][idx]
    return total, sizes, weights


def _cost_from_terminal(weights: np.ndarray, terminal: np.ndarray, spec: MarketSpec, x: float) -> float:
    mean = float(weights @ terminal)
    var = float(weights @ (terminal - mean) ** 2)
    return var - (spec.mu1 * x + spec.mu2) * mean


def evaluate_cost_exact(
    tree: ScenarioTree, spec: MarketSpec, policy, k: int | None = None, x: float | None = None
) -> float:
    """Exact cost of following the policy from (k, x) on the tree.

    Returns E(X_N - E X_N)^2 - (mu1 x + mu2) E X_N with both moments computed
    as probability-weighted sums over all suffix scenarios. On-path cost is
    the same under all three deviation notions, so no semantics is needed.
    """
    applied = _applied(policy)
    k = applied.start_stage if k is None else int(k)
    x = spec.initial_wealth if x is None else float(x)
    if k < applied.start_stage:
        raise ValueError(f"stage {k} precedes the policy's start stage {applied.start_stage}")
    _check_leaf_budget(tree, k)
    total, sizes, weights = _suffix_weights(tree, k)
    X = np.full(total, x)
    for pos, stage in enumerate(range(k, spec.horizon)):
        o = tree.atoms[stage][_suffix_index(total, sizes, pos)]
        u = np.outer(X, applied.gain(stage)) + applied.offset(stage)
        X = spec.riskless[stage] * X + np.einsum("ij,ij->i", o, u)
    return _cost_from_terminal(weights, X, spec, x)


def spike_cost(
    tree: ScenarioTree,
    spec: MarketSpec,
    policy,
    k: int,
    x: float,
    u: np.ndarray,
    semantics: DeviationSemantics | None = None,
    x_star: float | None = None,
) -> float:
    """Exact cost of deviating to u at (k, x), continuation per the semantics.

    x_star is the undeviated state at the node (defaults to x); the frozen
    continuations replay the undeviated path grown from it per scenario.
    """
    applied = _applied(policy)
    semantics = _default_semantics(policy) if semantics is None else semantics
    strategy = _strategy_gains(policy)
    if semantics is DeviationSemantics.MIXED and strategy is None:
        raise TypeError("mixed semantics needs the MixedSolution, not just the applied policy")
    x_star = x if x_star is None else float(x_star)
    _check_leaf_budget(tree, k)
    total, sizes, weights = _suffix_weights(tree, k)
    u = np.asarray(u, dtype=float)

    o_k = tree.atoms[k][_suffix_index(total, sizes, 0)]
    u_star_k = applied.control(k, x_star)
    X_star = spec.riskless[k] * x_star + o_k @ u_star_k
    X_dev = spec.riskless[k] * x + o_k @ u
    for pos, stage in enumerate(range(k + 1, spec.horizon), start=1):
        o = tree.atoms[stage][_suffix_index(total, sizes, pos)]
        u_star = np.outer(X_star, applied.gain(stage)) + applied.offset(stage)
        if semantics is DeviationSemantics.OPEN_LOOP:
            u_dev = u_star
        elif semantics is DeviationSemantics.FEEDBACK:
            u_dev = np.outer(X_dev, applied.gain(stage)) + applied.offset(stage)
        else:
            frozen = u_star - np.outer(X_star, strategy[stage])
            u_dev = np.outer(X_dev, strategy[stage]) + frozen
        X_star = spec.riskless[stage] * X_star + np.einsum("ij,ij->i", o, u_star)
        X_dev = spec.riskless[stage] * X_dev + np.einsum("ij,ij->i", o, u_dev)
    return _cost_from_terminal(weights, X_dev, spec, x)


def best_spike_deviation(
    tree: ScenarioTree,
    spec: MarketSpec,
    policy,
    k: int,
    x: float,
    semantics: DeviationSemantics | None = None,
    x_star: float | None = None,
) -> tuple[np.ndarray, float]:
    """Globally best one-stage deviation at (k, x) and its exact cost.

    The deviation cost is an exact quadratic in u (terminal wealth is affine
    in u per scenario), so it is fitted from 1 + m + m(m+1)/2 evaluations
    around the policy's own action and minimized with the pseudoinverse. An
    indefinite quadratic raises EquilibriumStructureError; an unbounded one
    (gradient outside the Hessian's column space) returns cost -inf.
    """
    u_star, j_dev, _ = _best_spike(tree, spec, policy, k, x, semantics, x_star)
    return u_star, j_dev


def _best_spike(tree, spec, policy, k, x, semantics, x_star):
    applied = _applied(policy)
    m = applied.num_assets
    base = applied.control(k, x)

    def J(u):
        return spike_cost(tree, spec, policy, k, x, u, semantics, x_star)

    h = 1.0
    eye = np.eye(m)
    j0 = J(base)
    grad = np.zeros(m)
    hess = np.zeros((m, m))
    for i in range(m):
        jp = J(base + h * eye[i])
        jm = J(base - h * eye[i])
        grad[i] = (jp - jm) / (2 * h)
        hess[i, i] = (jp + jm - 2 * j0) / h**2
    for i in range(m):
        for j in range(i + 1, m):
            jij = J(base + h * (eye[i] + eye[j]))
            cross = jij - j0 - h * (grad[i] + grad[j]) - 0.5 * h**2 * (hess[i, i] + hess[j, j])
            hess[i, j] = hess[j, i] = cross / h**2
    eigs = np.linalg.eigvalsh(hess)
    if eigs[0] < -1e-8 * max(1.0, float(np.max(np.abs(eigs)))):
        raise EquilibriumStructureError(
            f"deviation cost at stage {k} is not convex (min curvature {eigs[0]:.3e})"
        )
    in_range, _ = range_membership(grad, hess)
    step = -pseudoinverse(hess).pinv @ grad
    if not in_range:
        return base + step, float("-inf"), j0
    j_dev = j0 + grad @ step + 0.5 * step @ hess @ step
    return base + step, float(j_dev), j0


@dataclass(frozen=True)
class DeviationReport:
    """Outcome of the spike-deviation test at one (stage, node) pair."""

    stage: int
    node: int
    j_star: float
    j_dev: float
    gap: float
    passed: bool
    semantics: DeviationSemantics
    deviation: np.ndarray
    tol: float


def verify_equilibrium(
    tree: ScenarioTree,
    spec: MarketSpec,
    policy,
    semantics: DeviationSemantics | None = None,
    tol: float | None = None,
) -> list[DeviationReport]:
    """Spike-deviation test at every reachable node of every stage.

    Nodes are the undeviated wealth values reached from (initial_time,
    initial_wealth) along tree scenarios. Each report's tolerance is the given
    tol, or 1e-7 * max(1, |J*|) by default; the policy passes when every gap
    J_dev - J* clears -tol.
    """
    applied = _applied(policy)
    semantics = _default_semantics(policy) if semantics is None else semantics
    t = applied.start_stage
    _check_leaf_budget(tree, t)
    reports: list[DeviationReport] = []
    states = np.array([spec.initial_wealth])
    for k in range(t, spec.horizon):
        for node, x in enumerate(states):
            u_dev, j_dev, j_star = _best_spike(tree, spec, policy, k, float(x), semantics, None)
            node_tol = 1e-7 * max(1.0, abs(j_star)) if tol is None else tol
            gap = j_dev - j_star
            reports.append(
                DeviationReport(
                    stage=k,
                    node=node,
                    j_star=j_star,
                    j_dev=j_dev,
                    gap=gap,
                    passed=bool(gap >= -node_tol),
                    semantics=semantics,
                    deviation=u_dev,
                    tol=node_tol,
                )
            )
        controls = np.outer(states, applied.gain(k)) + applied.offset(k)
        growth = spec.riskless[k] * states[None, :] + tree.atoms[k] @ controls.T
        states = growth.T.reshape(-1)  # children of node n occupy block n
    return reports


def verification_summary(reports: list[DeviationReport]) -> dict:
    min_gap = min((r.gap for r in reports), default=float("nan"))
    return {
        "count": len(reports),
        "min_gap": min_gap,
        "passed": all(r.passed for r in reports),
    }


def export_verification_jsonl(reports: list[DeviationReport], target=None) -> str:
    """One JSON line per report plus a trailing summary line."""
    lines = []
    for r in reports:
        lines.append(
            json.dumps(
                {
                    "stage": r.stage,
                    "node": r.node,
                    "j_star": r.j_star,
                    "j_dev": r.j_dev,
                    "gap": r.gap,
                    "passed": r.passed,
                    "semantics": r.semantics.value,
                    "deviation": list(r.deviation),
                    "tol": r.tol,
                }
            )
        )
    summary = verification_summary(reports)
    summary["summary"] = True
    lines.append(json.dumps(summary))
    text = "\n".join(lines) + "\n"
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w") as fh:
                fh.write(text)
    return text


@dataclass(frozen=True)
class SimulationSummary:
    """Monte Carlo estimates with standard errors, reproducible by seed."""

    n_paths: int
    seed: int
    distribution: str
    mean_terminal: float
    var_terminal: float
    cost: float
    se_mean: float
    se_var: float
    se_cost: float


def _gaussian_factors(moments: ExcessMoments, psd_tol: float = DEFAULT_PSD_TOL):
    factors = []
    for k in range(moments.horizon):
        cov = moments.cov_excess[k]
        w, Q = np.linalg.eigh(0.5 * (cov + cov.T))
        cutoff = psd_tol * max(1.0, float(np.max(np.abs(w)))) if w.size else 0.0
        keep = w > cutoff
        factors.append(Q[:, keep] * np.sqrt(w[keep]))
    return factors


def simulate_monte_carlo(
    spec: MarketSpec,
    policy,
    n_paths: int,
    seed: int,
    distribution="gaussian",
    moments: ExcessMoments | None = None,
) -> SimulationSummary:
    """Simulate terminal wealth under the applied policy from (t, x).

    distribution is either the string "gaussian" (normal excess returns with
    the market's exact mean and covariance) or a ScenarioTree to sample atoms
    from, which makes the estimates converge to evaluate_cost_exact on that
    same tree. The cost standard error uses the influence function of
    Var - (mu1 x + mu2) * Mean.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    applied = _applied(policy)
    t, x0 = applied.start_stage, spec.initial_wealth
    rng = np.random.default_rng(seed)
    sampling_tree = distribution if isinstance(distribution, ScenarioTree) else None
    if sampling_tree is None and distribution != "gaussian":
        raise ValueError(f"unknown distribution {distribution!r}")
    if sampling_tree is None:
        from .market import derive_excess_moments

        moments = derive_excess_moments(spec) if moments is None else moments
        factors = _gaussian_factors(moments)

    X = np.full(n_paths, x0)
    for k in range(t, spec.horizon):
        if sampling_tree is not None:
            p = sampling_tree.probabilities[k]
            idx = rng.choice(len(p), size=n_paths, p=p)
            o = sampling_tree.atoms[k][idx]
        else:
            F = factors[k]
            o = moments.mean_excess[k] + rng.standard_normal((n_paths, F.shape[1])) @ F.T
        u = np.outer(X, applied.gain(k)) + applied.offset(k)
        X = spec.riskless[k] * X + np.einsum("ij,ij->i", o, u)

    mean = float(X.mean())
    var = float(X.var(ddof=1))
    cmu = spec.mu1 * x0 + spec.mu2
    cost = var - cmu * mean
    centered = X - mean
    se_mean = float(centered.std(ddof=1) / math.sqrt(n_paths))
    m4 = float(np.mean(centered**4))
    se_var = math.sqrt(max(m4 - (n_paths - 3) / (n_paths - 1) * var**2, 0.0) / n_paths)
    influence = centered**2 - var - cmu * centered
    se_cost = float(influence.std(ddof=1) / math.sqrt(n_paths))
    return SimulationSummary(
        n_paths=n_paths,
        seed=seed,
        distribution="tree" if sampling_tree is not None else "gaussian",
        mean_terminal=mean,
        var_terminal=var,
        cost=cost,
        se_mean=se_mean,
        se_var=se_var,
        se_cost=se_cost,
    )
