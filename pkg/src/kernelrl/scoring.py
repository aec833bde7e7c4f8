"""Kernel scoring: turn an evaluation result into a scalar reward.

The score combines a flat correctness bonus with the measured speedup over
the reference implementation. Every non-correct outcome scores exactly 0,
including guard rejections.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ContractViolation


class EvalStatus(str, Enum):
    """Outcome category of one candidate evaluation.

    Categories form an ordered funnel: a later category implies every
    earlier check passed (format parsed, guards clean, compiled, ran).
    """

    parse_error = "parse_error"
    guard_rejected = "guard_rejected"
    compile_error = "compile_error"
    runtime_error = "runtime_error"
    incorrect = "incorrect"
    correct = "correct"


# Funnel order, earliest check first.
STATUS_FUNNEL: tuple[EvalStatus, ...] = (
    EvalStatus.parse_error,
    EvalStatus.guard_rejected,
    EvalStatus.compile_error,
    EvalStatus.runtime_error,
    EvalStatus.incorrect,
    EvalStatus.correct,
)


@dataclass(frozen=True)
class EvalResult:
    """Outcome of evaluating one candidate program.

    `runtime_ms` and `baseline_ms` are present iff the candidate is correct;
    `error_message` is empty iff the candidate is correct.
    """

    status: EvalStatus
    baseline_ms: float | None = None
    runtime_ms: float | None = None
    error_message: str = ""

    def __post_init__(self) -> None:
        if self.status == EvalStatus.correct:
            if self.runtime_ms is None or self.runtime_ms <= 0:
                raise ContractViolation("correct result requires runtime_ms > 0")
            if self.baseline_ms is None or self.baseline_ms <= 0:
                raise ContractViolation("correct result requires baseline_ms > 0")
            if self.error_message:
                raise ContractViolation("correct result must have empty error_message")
        else:
            if self.runtime_ms is not None:
                raise ContractViolation(
                    f"runtime_ms must be absent for status {self.status.value}"
                )
            if not self.error_message:
                raise ContractViolation(
                    f"status {self.status.value} requires a nonempty error_message"
                )

    @property
    def speedup(self) -> float | None:
        """Reference wall time over candidate wall time; None unless correct."""
        if self.status != EvalStatus.correct:
            return None
        assert self.baseline_ms is not None and self.runtime_ms is not None
        return self.baseline_ms / self.runtime_ms


@dataclass(frozen=True)
class ScoreWeights:
    """Weights of the correctness bonus and the speedup term."""

    correctness_weight: float = 0.3
    speedup_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.correctness_weight < 0 or self.speedup_weight < 0:
            raise ContractViolation("score weights must be nonnegative")


DEFAULT_WEIGHTS = ScoreWeights()


def score_kernel(result: EvalResult, weights: ScoreWeights = DEFAULT_WEIGHTS) -> float:
    """Scalar score of one evaluation.

    correctness_weight * 1{correct} + speedup_weight * speedup * 1{correct};
    exactly 0.0 for every non-correct status.
    """
    if result.status != EvalStatus.correct:
        return 0.0
    speedup = result.speedup
    assert speedup is not None
    return weights.correctness_weight + weights.speedup_weight * speedup


def fast_p(result: EvalResult, p: float) -> bool:
    """True iff the candidate is correct with speedup of at least p.

    The boundary is inclusive: a speedup exactly equal to p qualifies.
    """
    if p <= 0:
        raise ContractViolation("threshold p must be positive")
    if result.status != EvalStatus.correct:
        return False
    speedup = result.speedup
    assert speedup is not None
    return speedup >= p
