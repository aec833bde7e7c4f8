"""Turn-level reward aggregation and group-relative advantage normalization.

A trajectory's per-turn scores r_1..r_T are turned into per-turn rewards by
looking ahead: either the discounted suffix sum R_t = sum_{i>=t} gamma^(i-t) r_i
or the discounted suffix max R_t = max_{i>=t} gamma^(i-t) r_i. The two naive
baselines are kept for comparison: greedy (each turn its own score) and
outcome (every turn gets the trajectory's best score).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ContractViolation

AGG_MODES = ("sum", "max", "greedy", "outcome")


@dataclass(frozen=True)
class TurnScores:
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.scores) < 1:
            raise ContractViolation("TurnScores requires at least one turn")
        if any(s < 0 for s in self.scores):
            raise ContractViolation("turn scores must be nonnegative")


@dataclass(frozen=True)
class AggregationSpec:
    mode: str
    gamma: float

    def __post_init__(self) -> None:
        if self.mode not in AGG_MODES:
            raise ContractViolation(f"unknown aggregation mode {self.mode!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolation("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class GroupRewards:
    """Rewards of one task's group (m*n samples), plus the std guard epsilon."""

    rewards: tuple[float, ...]
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if len(self.rewards) < 2:
            raise ContractViolation("group normalization requires at least 2 rewards")
        if self.epsilon < 0:
            raise ContractViolation("epsilon must be nonnegative")


def _as_scores(scores: TurnScores | Sequence[float]) -> tuple[float, ...]:
    if isinstance(scores, TurnScores):
        return scores.scores
    return TurnScores(tuple(float(s) for s in scores)).scores


def aggregate(scores: TurnScores | Sequence[float], spec: AggregationSpec) -> list[float]:
    """Per-turn rewards R_1..R_T under the given aggregation mode."""
    r = _as_scores(scores)
    gamma = spec.gamma
    if spec.mode == "greedy":
        return list(r)
    if spec.mode == "outcome":
        best = max(r)
        return [best] * len(r)
    out = [0.0] * len(r)
    if spec.mode == "sum":
        running = 0.0
        for t in range(len(r) - 1, -1, -1):
            running = r[t] + gamma * running
            out[t] = running
    else:  # max
        running = 0.0
        for t in range(len(r) - 1, -1, -1):
            running = max(r[t], gamma * running)
            out[t] = running
    return out


def normalize_group(group: GroupRewards | Sequence[float], epsilon: float = 1e-8) -> list[float]:
    """Group-relative advantages: (r_i - mean) / (population std + epsilon).

    Zero-variance groups normalize to all-zero advantages instead of erroring;
    they are common early in training.
    """
    if isinstance(group, GroupRewards):
        rewards, epsilon = group.rewards, group.epsilon
    else:
        rewards = GroupRewards(tuple(float(x) for x in group), epsilon).rewards
    mean = math.fsum(rewards) / len(rewards)
    var = math.fsum((x - mean) ** 2 for x in rewards) / len(rewards)
    if var == 0.0:
        return [0.0] * len(rewards)
    std = math.sqrt(var)
    return [(x - mean) / (std + epsilon) for x in rewards]
