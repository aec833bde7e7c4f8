"""One training step: parallel trajectories, per-turn samples, reward wiring.

For every task, m trajectories of n refinement turns are rolled out. Each turn
builds a prompt from the trajectory history, asks the policy for a candidate,
runs the guard rules, evaluates survivors, and scores the result. Trajectories
are then split into per-turn training samples whose rewards come from the
credit module and whose advantages are normalized per task over all m*n
samples.

Trajectories within a task run concurrently; turns within a trajectory are
inherently sequential. Seeds derive from stable hashes of (run seed, task id,
trajectory index, turn index) so results do not depend on scheduling order.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import fsum
from typing import Iterable, Protocol, Sequence, runtime_checkable

from .context import Prompt, PromptBudget, TurnRecord, build_context, words_x13
from .credit import AggregationSpec, aggregate, normalize_group
from .errors import ConfigError, ContractViolation, ExecutorUnavailable, PolicyError
from .guardrails import RuleSet, check_candidate, default_rules
from .scoring import DEFAULT_WEIGHTS, EvalResult, EvalStatus, ScoreWeights, score_kernel


@dataclass(frozen=True)
class TaskSpec:
    """A task as the rollout engine sees it: an id plus its prompt text."""

    task_id: str
    task_text: str


@dataclass(frozen=True)
class GenerationResult:
    """What the policy returns for one turn."""

    cot_full: str
    kernel_source: str
    cot_summary: str
    response_tokens: int
    truncated: bool


@runtime_checkable
class PolicyContract(Protocol):
    def generate(self, prompt: str, seed: int, temperature: float,
                 max_response_tokens: int) -> GenerationResult: ...


@runtime_checkable
class ExecutorContract(Protocol):
    def evaluate(self, task_id: str, kernel_source: str, seed: int) -> EvalResult: ...


@dataclass
class Trajectory:
    task_id: str
    turns: list[TurnRecord]
    policy_id: str
    seed: int


@dataclass
class TrainingSample:
    """One refinement turn prepared for policy optimization."""

    task_id: str
    trajectory_index: int
    turn_index: int
    context: Prompt
    response: GenerationResult
    eval: EvalResult
    score: float
    aggregated_reward: float
    advantage: float = 0.0


@dataclass(frozen=True)
class StepStats:
    mean_reward: float
    correct_rate: float
    not_okay_ratio: float
    clipping_ratio: float

    def __post_init__(self) -> None:
        for name in ("correct_rate", "not_okay_ratio", "clipping_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class RolloutConfig:
    m: int
    n: int
    gamma: float
    agg_mode: str
    budget: PromptBudget
    temperature: float = 0.9
    max_response_tokens: int = 16384
    weights: ScoreWeights = DEFAULT_WEIGHTS
    rules: RuleSet | None = None  # None selects the stock default_rules()
    epsilon: float = 1e-8
    parallelism: int = 8
    first_turn_example: bool = True

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ContractViolation("m and n must be >= 1")
        if self.max_response_tokens < 1:
            raise ContractViolation("max_response_tokens must be positive")
        if self.parallelism < 1:
            raise ContractViolation("parallelism must be >= 1")
        AggregationSpec(self.agg_mode, self.gamma)  # validates mode and gamma


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary parts; independent of hash randomization."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(blob).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def not_okay_ratio(cots: Sequence[str], prefix: str = "Okay, ") -> float:
    """Fraction of chains of thought that do not open with the expected prefix."""
    if not cots:
        return 0.0
    bad = sum(1 for c in cots if not c.startswith(prefix))
    return bad / len(cots)


def clipping_ratio(samples: Iterable[object]) -> float:
    """Fraction of responses truncated at the maximum response length."""
    flags = [bool(getattr(getattr(s, "response", s), "truncated")) for s in samples]
    if not flags:
        return 0.0
    return sum(flags) / len(flags)


def _empty_generation() -> GenerationResult:
    return GenerationResult(cot_full="", kernel_source="", cot_summary="",
                            response_tokens=0, truncated=False)


def _roll_trajectory(task: TaskSpec, traj_index: int, policy: PolicyContract,
                     executor: ExecutorContract, cfg: RolloutConfig, rules: RuleSet,
                     run_seed: int) -> Trajectory:
    traj_seed = derive_seed(run_seed, task.task_id, traj_index)
    turns: list[TurnRecord] = []
    for turn_index in range(1, cfg.n + 1):
        turn_seed = derive_seed(traj_seed, turn_index)
        prompt = build_context(task.task_text, turns, cfg.budget, cfg.first_turn_example)
        try:
            gen = policy.generate(prompt.text, seed=turn_seed, temperature=cfg.temperature,
                                  max_response_tokens=cfg.max_response_tokens)
        except Exception as exc:  # malformed output is a turn outcome, not a crash
            gen = _empty_generation()
            result = EvalResult(EvalStatus.parse_error,
                                error_message=f"policy failure: {exc}")
        else:
            verdict = check_candidate(gen.kernel_source, rules)
            if not verdict.accepted:
                ids = ", ".join(sorted(set(verdict.rule_ids())))
                result = EvalResult(EvalStatus.guard_rejected,
                                    error_message=f"rejected by guard rules: {ids}")
            else:
                try:
                    result = executor.evaluate(task.task_id, gen.kernel_source, turn_seed)
                except Exception as exc:
                    raise ExecutorUnavailable(
                        f"executor failed on task {task.task_id}, trajectory "
                        f"{traj_index}, turn {turn_index} ({len(turns)} turns completed): {exc}",
                        task_id=task.task_id, trajectory_index=traj_index,
                        turn_index=turn_index,
                    ) from exc
        turns.append(TurnRecord(
            kernel_source=gen.kernel_source,
            cot_summary=gen.cot_summary,
            eval=result,
            turn_index=turn_index,
            cot_full=gen.cot_full,
            response_tokens=gen.response_tokens,
            truncated=gen.truncated,
        ))
    policy_id = getattr(policy, "policy_id", type(policy).__name__)
    return Trajectory(task_id=task.task_id, turns=turns, policy_id=policy_id, seed=traj_seed)


def split_trajectory(traj: Trajectory, gamma: float, agg_mode: str, *,
                     task_text: str, budget: PromptBudget,
                     weights: ScoreWeights = DEFAULT_WEIGHTS,
                     trajectory_index: int = 0,
                     first_turn_example: bool = True) -> list[TrainingSample]:
    """One training sample per turn; sample t sees turns < t in its context."""
    scores = [score_kernel(t.eval, weights) for t in traj.turns]
    rewards = aggregate(scores, AggregationSpec(agg_mode, gamma))
    samples = []
    for idx, turn in enumerate(traj.turns):
        prompt = build_context(task_text, traj.turns[:idx], budget, first_turn_example)
        response = GenerationResult(
            cot_full=turn.cot_full,
            kernel_source=turn.kernel_source,
            cot_summary=turn.cot_summary,
            response_tokens=turn.response_tokens,
            truncated=turn.truncated,
        )
        samples.append(TrainingSample(
            task_id=traj.task_id,
            trajectory_index=trajectory_index,
            turn_index=turn.turn_index,
            context=prompt,
            response=response,
            eval=turn.eval,
            score=scores[idx],
            aggregated_reward=rewards[idx],
        ))
    return samples


def _worker_cap(*participants: object) -> int:
    caps = [getattr(p, "max_parallelism", None) for p in participants]
    caps = [c for c in caps if isinstance(c, int) and c >= 1]
    return min(caps) if caps else 10**9


def run_training_step(tasks: Sequence[TaskSpec], policy: PolicyContract,
                      executor: ExecutorContract, cfg: RolloutConfig,
                      run_seed: int = 0) -> tuple[list[TrainingSample], StepStats]:
    """Roll out every task, split into samples, and normalize advantages per task."""
    if not tasks:
        raise ContractViolation("tasks must be nonempty")
    rules = cfg.rules if cfg.rules is not None else default_rules()

    jobs = [(task, ti) for task in tasks for ti in range(cfg.m)]
    max_workers = max(1, min(cfg.parallelism, len(jobs), _worker_cap(policy, executor)))
    trajectories: dict[tuple[str, int], Trajectory] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {
            pool.submit(_roll_trajectory, task, ti, policy, executor, cfg, rules, run_seed): (task.task_id, ti)
            for task, ti in jobs
        }
        for future, key in futures.items():
            trajectories[key] = future.result()

    samples: list[TrainingSample] = []
    for task in tasks:
        task_samples: list[TrainingSample] = []
        for ti in range(cfg.m):
            traj = trajectories[(task.task_id, ti)]
            task_samples.extend(split_trajectory(
                traj, cfg.gamma, cfg.agg_mode,
                task_text=task.task_text, budget=cfg.budget, weights=cfg.weights,
                trajectory_index=ti, first_turn_example=cfg.first_turn_example,
            ))
        rewards = [s.aggregated_reward for s in task_samples]
        if len(rewards) >= 2:
            advantages = normalize_group(rewards, cfg.epsilon)
        else:
            advantages = [0.0] * len(rewards)  # degenerate 1-sample group
        for sample, adv in zip(task_samples, advantages):
            sample.advantage = adv
        samples.extend(task_samples)

    samples.sort(key=lambda s: (s.task_id, s.trajectory_index, s.turn_index))
    stats = StepStats(
        mean_reward=fsum(s.aggregated_reward for s in samples) / len(samples),
        correct_rate=sum(s.eval.status == EvalStatus.correct for s in samples) / len(samples),
        not_okay_ratio=not_okay_ratio([s.response.cot_full for s in samples]),
        clipping_ratio=clipping_ratio(samples),
    )
    return samples, stats


# --- external chat-completion policy -------------------------------------------

_FENCED_BLOCK_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def parse_completion(text: str, max_response_tokens: int) -> GenerationResult:
    """Split a raw completion into kernel and summary.

    Convention: the last fenced code block is the kernel; prose after it is the
    change summary. No fenced block means the response is unusable.
    """
    blocks = list(_FENCED_BLOCK_RE.finditer(text))
    if not blocks:
        raise PolicyError("no fenced code block in response")
    last = blocks[-1]
    kernel = last.group(1).strip("\n")
    summary = text[last.end():].strip()
    tokens = min(words_x13(text), max_response_tokens)
    return GenerationResult(
        cot_full=text,
        kernel_source=kernel,
        cot_summary=summary,
        response_tokens=tokens,
        truncated=tokens == max_response_tokens,
    )


class ExternalPolicy:
    """Policy backed by a chat-completion HTTP endpoint.

    Endpoint and auth come from the POLICY_ENDPOINT and POLICY_TOKEN environment
    variables. Requests carry prompt text, temperature, max tokens, and seed;
    the response body must be JSON with a "text" field.
    """

    policy_id = "external"

    def __init__(self, endpoint: str | None = None, token: str | None = None,
                 timeout_s: float = 120.0):
        self.endpoint = endpoint or os.environ.get("POLICY_ENDPOINT", "")
        self.token = token if token is not None else os.environ.get("POLICY_TOKEN", "")
        self.timeout_s = timeout_s
        if not self.endpoint:
            raise ConfigError("external policy requires POLICY_ENDPOINT")

    def generate(self, prompt: str, seed: int, temperature: float,
                 max_response_tokens: int) -> GenerationResult:
        payload = json.dumps({
            "prompt": prompt,
            "temperature": temperature,
            "max_tokens": max_response_tokens,
            "seed": seed,
        }).encode("utf-8")
        request = urllib.request.Request(self.endpoint, data=payload, method="POST")
        request.add_header("Content-Type", "application/json")
        if self.token:
            request.add_header("Authorization", f"Bearer {self.token}")
        with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
            body = json.loads(response.read().decode("utf-8"))
        if "text" not in body:
            raise PolicyError("endpoint response missing 'text' field")
        return parse_completion(body["text"], max_response_tokens)
