"""Shared policy and failure types used by all three solvers."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class PolicyKind(enum.Enum):
    OPEN_LOOP = "open_loop"
    FEEDBACK = "feedback"
    MIXED_APPLIED = "mixed_applied"


class FailingCondition(enum.Enum):
    """Which stage condition broke, certifying why no solution exists.

    RANGE_CONDITION: mean excess return not in the column space of its
    covariance (the exact open-loop existence test). PSD_CONDITION: a stage
    gain matrix failed positive semidefiniteness. GAIN_SOLVABILITY /
    OFFSET_SOLVABILITY: the stage gain or offset equation has no solution
    (right-hand side outside the gain matrix's column space).
    """

    RANGE_CONDITION = "range_condition"
    PSD_CONDITION = "psd_condition"
    GAIN_SOLVABILITY = "gain_solvability"
    OFFSET_SOLVABILITY = "offset_solvability"


@dataclass(frozen=True)
class NonexistenceReport:
    failing_stage: int
    failing_condition: FailingCondition
    residual: float

    def describe(self) -> str:
        return (
            f"no solution: {self.failing_condition.value} failed at stage "
            f"{self.failing_stage} (residual {self.residual:.3e})"
        )


class InternalInconsistencyError(RuntimeError):
    """A condition the theory guarantees was violated numerically.

    Raised, for example, when the feedback recursion fails a solvability
    check on an instance whose range conditions all hold; that combination
    indicates a numerics bug rather than genuine nonexistence.
    """


@dataclass(frozen=True)
class AffinePolicy:
    """Stagewise affine control rule u_k = gains[k - start_stage] * x + offsets[...].

    gains and offsets have one row per stage from start_stage through the
    final trading stage. The rule is wealth-affine with vector coefficients:
    scalar wealth times a gain vector plus an offset vector.
    """

    kind: PolicyKind
    start_stage: int
    gains: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        gains = np.atleast_2d(np.asarray(self.gains, dtype=float))
        offsets = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        if gains.shape != offsets.shape:
            raise ValueError("gains and offsets must have matching shapes")
        if not (np.all(np.isfinite(gains)) and np.all(np.isfinite(offsets))):
            raise ValueError("policy coefficients must be finite")
        gains.flags.writeable = False
        offsets.flags.writeable = False
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "offsets", offsets)

    @property
    def horizon(self) -> int:
        return self.start_stage + self.gains.shape[0]

    @property
    def num_assets(self) -> int:
        return self.gains.shape[1]

    def gain(self, k: int) -> np.ndarray:
        return self.gains[k - self.start_stage]

    def offset(self, k: int) -> np.ndarray:
        return self.offsets[k - self.start_stage]

    def control(self, k: int, x: float) -> np.ndarray:
        """Prescribed asset allocation at stage k and wealth x."""
        return self.gain(k) * x + self.offset(k)
