"""Trajectory-level metrics and group estimators.

A trajectory is correct if any turn is correct; its performance is the best
speedup among correct turns (0 when none). Across k parallel trajectories,
best@k is the expected maximum over a uniform random k-subset (the unbiased
rank-weighted estimator; exact rational arithmetic for small n) and avg@k is
the plain mean. pass@k is the standard unbiased hit estimator, computed with
telescoping ratio products so n in the tens of thousands stays exact enough
and overflow-free.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .context import TurnRecord
from .errors import ContractViolation, ShortfallError
from .scoring import EvalResult, EvalStatus

# Fraction arithmetic below this population size; float recurrence above it.
_EXACT_N_LIMIT = 64


@dataclass(frozen=True)
class TrajectoryMetric:
    correct: bool
    performance: float
    fast_p_flags: dict[float, bool]

    def __post_init__(self) -> None:
        if (self.performance > 0) != self.correct:
            raise ContractViolation("performance must be positive iff correct")


@dataclass(frozen=True)
class GroupEstimate:
    metric_name: str
    k: int
    n: int
    estimate: float
    method: str  # exact_enumeration | closed_form

    def __post_init__(self) -> None:
        if self.k > self.n:
            raise ContractViolation("k must not exceed n")


def _turn_evals(traj) -> list[EvalResult]:
    turns = getattr(traj, "turns", traj)
    evals = []
    for turn in turns:
        evals.append(turn.eval if isinstance(turn, TurnRecord) else turn)
    return evals


def trajectory_metric(traj, thresholds: Sequence[float] = ()) -> TrajectoryMetric:
    """Collapse one trajectory's turns into correctness/performance/fast_p."""
    evals = _turn_evals(traj)
    if not evals:
        raise ContractViolation("trajectory must have at least one turn")
    speedups = [e.speedup for e in evals if e.status == EvalStatus.correct]
    performance = max(speedups) if speedups else 0.0
    correct = bool(speedups)
    flags = {p: correct and performance >= p for p in thresholds}
    return TrajectoryMetric(correct=correct, performance=performance, fast_p_flags=flags)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased probability that a random k-subset of n samples contains a hit."""
    if not 0 <= c <= n:
        raise ContractViolation("require 0 <= c <= n")
    if not 1 <= k <= n:
        raise ContractViolation("require 1 <= k <= n")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    miss = 1.0
    for i in range(k):
        miss *= (n - c - i) / (n - i)
    return 1.0 - miss


def best_at_k_exact(values: Sequence[float], k: int) -> Fraction:
    """Rank-weighted estimator as an exact rational (small populations)."""
    n = len(values)
    ordered = sorted(values)
    total = Fraction(0)
    for j in range(k, n + 1):
        total += Fraction(ordered[j - 1]) * math.comb(j - 1, k - 1)
    return total / math.comb(n, k)


def best_at_k(values: Sequence[float], k: int) -> float:
    """Unbiased estimate of E[max over a uniform random k-subset of values].

    With values sorted ascending, the max of a random subset equals the j-th
    order statistic with probability C(j-1, k-1)/C(n, k), so the estimate is
    the rank-weighted sum. Small populations use exact rational arithmetic.
    """
    n = len(values)
    if n == 0:
        raise ContractViolation("values must be nonempty")
    if not 1 <= k <= n:
        raise ContractViolation("require 1 <= k <= n")
    if n <= _EXACT_N_LIMIT:
        return float(best_at_k_exact(values, k))
    ordered = sorted(values)
    # Downward weight recurrence: w_n = k/n, w_j = w_{j+1} * (j - k + 1) / j.
    weight = k / n
    total = 0.0
    for j in range(n, k - 1, -1):
        total += ordered[j - 1] * weight
        weight *= (j - k) / (j - 1) if j > 1 else 0.0
    return total


def avg_at_k(values: Sequence[float], k: int) -> float:
    """Mean across trajectories; k is recorded for reporting only."""
    n = len(values)
    if n == 0:
        raise ContractViolation("values must be nonempty")
    if not 1 <= k <= n:
        raise ContractViolation("require 1 <= k <= n")
    return math.fsum(values) / n


def estimate_best(metric_name: str, values: Sequence[float], k: int) -> GroupEstimate:
    method = "exact_enumeration" if len(values) <= _EXACT_N_LIMIT else "closed_form"
    return GroupEstimate(metric_name=metric_name, k=k, n=len(values),
                         estimate=best_at_k(values, k), method=method)


# --- fixed-budget parallel-vs-sequential study -----------------------------------


@dataclass(frozen=True)
class ScalingRow:
    num_trajectories: int
    num_turns: int
    mean_performance: float
    correctness: float
    per_task_performance: dict[str, float]
    per_task_correct: dict[str, bool]


@dataclass(frozen=True)
class ScalingReport:
    budget: int
    rows: tuple[ScalingRow, ...]

    def to_text(self) -> str:
        header = f"{'total':>6} {'#traj':>6} {'#turns':>7} {'performance':>12} {'correctness':>12}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{self.budget:>6} {row.num_trajectories:>6} {row.num_turns:>7} "
                f"{row.mean_performance:>12.4f} {row.correctness:>12.4f}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "config", "task", "value"])
        for row in self.rows:
            config = f"{row.num_trajectories}x{row.num_turns}"
            for task_id in sorted(row.per_task_performance):
                writer.writerow(["performance", config, task_id,
                                 repr(row.per_task_performance[task_id])])
                writer.writerow(["correctness", config, task_id,
                                 int(row.per_task_correct[task_id])])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "budget": self.budget,
            "rows": [
                {
                    "num_trajectories": r.num_trajectories,
                    "num_turns": r.num_turns,
                    "mean_performance": r.mean_performance,
                    "correctness": r.correctness,
                    "per_task_performance": r.per_task_performance,
                    "per_task_correct": r.per_task_correct,
                }
                for r in self.rows
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def scaling_report(trajectories_by_task: Mapping[str, Sequence[Sequence[EvalResult]]],
                   configs: Sequence[tuple[int, int]], budget: int) -> ScalingReport:
    """Compare inference configurations at a fixed total-sample budget.

    Each config (num_trajectories, num_turns) must multiply to the budget. Per
    task, the config's value is the best performance over its first
    num_trajectories trajectories truncated to num_turns turns each; rows
    report means over tasks.
    """
    for num_traj, num_turns in configs:
        if num_traj * num_turns != budget:
            raise ContractViolation(
                f"config {num_traj}x{num_turns} does not match budget {budget}"
            )
    rows = []
    for num_traj, num_turns in configs:
        per_task_perf: dict[str, float] = {}
        per_task_correct: dict[str, bool] = {}
        for task_id, trajectories in trajectories_by_task.items():
            if len(trajectories) < num_traj:
                raise ShortfallError(task_id, (
                    f"task {task_id} has {len(trajectories)} trajectories, "
                    f"config {num_traj}x{num_turns} needs {num_traj}"
                ))
            best_perf = 0.0
            any_correct = False
            for trajectory in list(trajectories)[:num_traj]:
                if len(trajectory) < num_turns:
                    raise ShortfallError(task_id, (
                        f"task {task_id} has a trajectory with {len(trajectory)} turns, "
                        f"config {num_traj}x{num_turns} needs {num_turns}"
                    ))
                metric = trajectory_metric(list(trajectory)[:num_turns])
                best_perf = max(best_perf, metric.performance)
                any_correct = any_correct or metric.correct
            per_task_perf[task_id] = best_perf
            per_task_correct[task_id] = any_correct
        n_tasks = len(per_task_perf)
        rows.append(ScalingRow(
            num_trajectories=num_traj,
            num_turns=num_turns,
            mean_performance=math.fsum(per_task_perf.values()) / n_tasks,
            correctness=sum(per_task_correct.values()) / n_tasks,
            per_task_performance=per_task_perf,
            per_task_correct=per_task_correct,
        ))
    return ScalingReport(budget=budget, rows=tuple(rows))
