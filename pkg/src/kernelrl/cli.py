"""Operator entry point: rollout, eval, scaling, gradcheck, guard-lint.

One JSON config document drives a run. Exit codes: 0 success, 2 config error,
3 data shortfall, 4 check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import grpo, metrics, simenv
from .context import PromptBudget
from .credit import AGG_MODES
from .errors import (ConfigError, ContractViolation, RunNotFoundError, ShortfallError,
                     StoreConflictError)
from .guardrails import check_candidate, default_rules, rules_from_json
from .rollout import (ExternalPolicy, RolloutConfig, TaskSpec, derive_seed,
                      run_training_step)
from .scoring import ScoreWeights
from .store import RunStore, TurnRow
from .workerclient import WorkerExecutor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SHORTFALL = 3
EXIT_CHECK_FAILED = 4

GRAD_CHECK_TOLERANCE = 1e-4


def _take(obj: dict, context: str, required: Sequence[str], optional: Sequence[str]) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context} must be an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    missing = [key for key in required if key not in obj]
    if missing:
        raise ConfigError(f"{context}: missing keys {missing}")
    return obj


def _positive_int(obj: dict, key: str, context: str, default: int | None = None) -> int:
    value = obj.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{context}.{key} must be a positive integer, got {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    seed: int
    m: int
    n: int
    gamma: float
    agg_mode: str
    weights: ScoreWeights
    grpo: grpo.GrpoConfig
    budget_tokens: int
    max_response_tokens: int
    schedule: tuple[tuple[int, int], ...]  # (at_step, value), sorted
    policy_spec: dict
    executor_spec: dict
    task_spec: dict
    parallelism: int
    raw: dict = field(repr=False)

    def max_response_tokens_at(self, step: int) -> int:
        value = self.max_response_tokens
        for at_step, scheduled in self.schedule:
            if step >= at_step:
                value = scheduled
        return value


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None

    top = _take(raw, "config", [], [
        "seed", "m", "n", "gamma", "agg_mode", "score_weights", "grpo",
        "budget_tokens", "max_response_tokens", "max_response_tokens_schedule",
        "policy", "executor", "tasks", "parallelism",
    ])

    seed = top.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("config.seed must be an integer")
    m = _positive_int(top, "m", "config", 16)
    n = _positive_int(top, "n", "config", 4)
    gamma = top.get("gamma", 0.4)
    if not isinstance(gamma, (int, float)) or isinstance(gamma, bool) or not 0 <= gamma <= 1:
        raise ConfigError(f"config.gamma must be a number in [0, 1], got {gamma!r}")
    agg_mode = top.get("agg_mode", "sum")
    if agg_mode not in AGG_MODES:
        raise ConfigError(f"config.agg_mode must be one of {AGG_MODES}, got {agg_mode!r}")

    weights_obj = _take(top.get("score_weights", {}), "config.score_weights", [],
                        ["correctness_weight", "speedup_weight"])
    try:
        weights = ScoreWeights(
            correctness_weight=float(weights_obj.get("correctness_weight", 0.3)),
            speedup_weight=float(weights_obj.get("speedup_weight", 1.0)),
        )
    except (ContractViolation, TypeError, ValueError) as exc:
        raise ConfigError(f"config.score_weights: {exc}") from None

    grpo_obj = _take(top.get("grpo", {}), "config.grpo", [], [
        "eps_low", "eps_high", "beta", "norm_mode", "norm_constant",
        "max_grad_norm", "temperature",
    ])
    max_response_tokens = _positive_int(top, "max_response_tokens", "config", 16384)
    try:
        grpo_cfg = grpo.GrpoConfig(
            eps_low=float(grpo_obj.get("eps_low", 0.2)),
            eps_high=float(grpo_obj.get("eps_high", 0.28)),
            beta=float(grpo_obj.get("beta", 0.0)),
            norm_mode=grpo_obj.get("norm_mode", "per_sequence"),
            norm_constant=int(grpo_obj.get("norm_constant", max_response_tokens)),
            max_grad_norm=float(grpo_obj.get("max_grad_norm", 0.05)),
            temperature=float(grpo_obj.get("temperature", 0.9)),
        )
    except (ContractViolation, TypeError, ValueError) as exc:
        raise ConfigError(f"config.grpo: {exc}") from None

    schedule_raw = top.get("max_response_tokens_schedule", [])
    if not isinstance(schedule_raw, list):
        raise ConfigError("config.max_response_tokens_schedule must be a list")
    schedule = []
    for entry in schedule_raw:
        entry = _take(entry, "schedule entry", ["at_step", "value"], [])
        if entry["at_step"] < 0:
            raise ConfigError("schedule entry at_step must be >= 0")
        schedule.append((entry["at_step"], _positive_int(entry, "value", "schedule entry")))
    schedule.sort()

    policy_spec = _take(top.get("policy", {"kind": "scripted", "name": "greedy"}),
                        "config.policy", ["kind"], ["name"])
    if policy_spec["kind"] == "scripted":
        name = policy_spec.get("name", "greedy")
        if name not in ("greedy", "explorer", "hacker", "stagnant"):
            raise ConfigError(f"config.policy.name: unknown scripted policy {name!r}")
    elif policy_spec["kind"] != "external":
        raise ConfigError(f"config.policy.kind must be scripted or external")

    executor_spec = _take(top.get("executor", {"kind": "simenv"}), "config.executor",
                          ["kind"], ["noise", "command", "references_dir"])
    if executor_spec["kind"] == "simenv":
        noise = executor_spec.get("noise", 0.0)
        if not isinstance(noise, (int, float)) or isinstance(noise, bool) or noise < 0:
            raise ConfigError("config.executor.noise must be a nonnegative number")
    elif executor_spec["kind"] == "worker":
        if not executor_spec.get("command"):
            raise ConfigError("config.executor.command is required for worker executor")
        if not executor_spec.get("references_dir"):
            raise ConfigError("config.executor.references_dir is required for worker executor")
    else:
        raise ConfigError("config.executor.kind must be simenv or worker")

    task_spec = _take(top.get("tasks", {"kind": "synthetic"}), "config.tasks",
                      ["kind"], ["seed", "count", "difficulty", "path"])
    if task_spec["kind"] == "synthetic":
        difficulty = task_spec.get("difficulty", "mixed")
        if difficulty not in ("easy", "mixed", "hard"):
            raise ConfigError(f"config.tasks.difficulty: unknown value {difficulty!r}")
    elif task_spec["kind"] == "file":
        if "path" not in task_spec:
            raise ConfigError("config.tasks.path is required for file tasks")
    else:
        raise ConfigError("config.tasks.kind must be synthetic or file")

    return RunConfig(
        seed=seed, m=m, n=n, gamma=float(gamma), agg_mode=agg_mode, weights=weights,
        grpo=grpo_cfg,
        budget_tokens=_positive_int(top, "budget_tokens", "config", 16384),
        max_response_tokens=max_response_tokens,
        schedule=tuple(schedule),
        policy_spec=dict(policy_spec),
        executor_spec=dict(executor_spec),
        task_spec=dict(task_spec),
        parallelism=_positive_int(top, "parallelism", "config", 8),
        raw=raw,
    )


def _build_environment(config: RunConfig):
    """Resolve (tasks, policy, executor, guard rules) from the config."""
    if config.task_spec["kind"] == "synthetic":
        synth_tasks = simenv.gen_tasks(
            seed=config.task_spec.get("seed", config.seed),
            count=config.task_spec.get("count", 8),
            difficulty=config.task_spec.get("difficulty", "mixed"),
        )
    else:
        synth_tasks = simenv.tasks_from_json(Path(config.task_spec["path"]).read_text("utf-8"))

    if config.executor_spec["kind"] == "simenv":
        tasks = [TaskSpec(t.task_id, simenv.render_task_text(t)) for t in synth_tasks]
        executor = simenv.SimEnvExecutor(synth_tasks, noise=config.executor_spec.get("noise", 0.0))
        rules = simenv.synth_rules()
    else:
        references_dir = Path(config.executor_spec["references_dir"])
        references = {p.stem: p.read_text("utf-8")
                      for p in sorted(references_dir.glob("*.py"))}
        if not references:
            raise ConfigError(f"no reference files under {references_dir}")
        tasks = [TaskSpec(task_id, source) for task_id, source in references.items()]
        executor = WorkerExecutor(config.executor_spec["command"], references)
        rules = default_rules()

    if config.policy_spec["kind"] == "scripted":
        policy = simenv.scripted_policy(config.policy_spec.get("name", "greedy"))
    else:
        policy = ExternalPolicy()
    return tasks, policy, executor, rules


def cmd_rollout(config_path: str, steps: int, run_id: str | None = None,
                runs_dir: str = "runs", parallelism: int | None = None) -> int:
    config = load_config(config_path)
    tasks, policy, executor, rules = _build_environment(config)

    store = RunStore(runs_dir)
    if run_id is None:
        run_id = f"run-{time.strftime('%Y%m%d-%H%M%S')}-{random.randrange(16**4):04x}"
    try:
        store.create_run(run_id, config.raw, config.seed)
    except StoreConflictError as exc:
        raise ConfigError(str(exc)) from None

    with store.writer(run_id) as writer:
        for step in range(steps):
            rollout_cfg = RolloutConfig(
                m=config.m, n=config.n, gamma=config.gamma, agg_mode=config.agg_mode,
                budget=PromptBudget(config.budget_tokens),
                temperature=config.grpo.temperature,
                max_response_tokens=config.max_response_tokens_at(step),
                weights=config.weights,
                rules=rules,
                parallelism=parallelism if parallelism is not None else config.parallelism,
            )
            samples, stats = run_training_step(
                tasks, policy, executor, rollout_cfg,
                run_seed=derive_seed(config.seed, step),
            )
            for sample in samples:
                writer.append_turn(TurnRow(
                    run_id=run_id, step=step, task_id=sample.task_id,
                    trajectory_index=sample.trajectory_index,
                    turn_index=sample.turn_index,
                    kernel_source=sample.response.kernel_source,
                    cot_summary=sample.response.cot_summary,
                    eval=sample.eval, score=sample.score,
                    aggregated_reward=sample.aggregated_reward,
                    advantage=sample.advantage,
                    response_tokens=sample.response.response_tokens,
                    truncated=sample.response.truncated,
                ))
                if sample.response.cot_full:
                    writer.append_cot(step, sample.task_id, sample.trajectory_index,
                                      sample.turn_index, sample.response.cot_full)
            writer.append_stats(step, {
                "mean_reward": stats.mean_reward,
                "correct_rate": stats.correct_rate,
                "not_okay_ratio": stats.not_okay_ratio,
                "clipping_ratio": stats.clipping_ratio,
            })
            print(f"step {step}: mean_reward={stats.mean_reward:.6f} "
                  f"correct_rate={stats.correct_rate:.4f} "
                  f"not_okay_ratio={stats.not_okay_ratio:.4f} "
                  f"clipping_ratio={stats.clipping_ratio:.4f}")
    if hasattr(executor, "close"):
        executor.close()
    print(f"run {run_id} complete: {steps} step(s) under {store.run_dir(run_id)}")
    return EXIT_OK


def _rows_to_evals(rows: Sequence[TurnRow]):
    return [row.eval for row in rows]


def _reports_dir(store: RunStore, run_id: str) -> Path:
    path = store.run_dir(run_id) / "reports"
    path.mkdir(exist_ok=True)
    return path


def cmd_eval(run_id: str, k: int, turns: int, thresholds: Sequence[float],
             runs_dir: str = "runs", step: int | None = None) -> int:
    store = RunStore(runs_dir)
    steps = store.steps(run_id)
    if not steps:
        raise ShortfallError("<all>", f"run {run_id!r} holds no turns")
    if step is None:
        step = steps[-1]
    by_task = store.trajectories(run_id, step)

    metric_names = ["correctness", "performance"] + [f"fast_{p:g}" for p in thresholds]
    per_task: dict[str, dict[str, dict[str, float]]] = {}
    for task_id, trajectories in sorted(by_task.items()):
        if len(trajectories) < k:
            raise ShortfallError(task_id, (
                f"task {task_id} has {len(trajectories)} trajectories, eval needs k={k}"
            ))
        values: dict[str, list[float]] = {name: [] for name in metric_names}
        for trajectory in trajectories:
            if len(trajectory) < turns:
                raise ShortfallError(task_id, (
                    f"task {task_id} trajectory has {len(trajectory)} turns, "
                    f"eval needs {turns}"
                ))
            tm = metrics.trajectory_metric(_rows_to_evals(trajectory[:turns]), thresholds)
            values["correctness"].append(1.0 if tm.correct else 0.0)
            values["performance"].append(tm.performance)
            for p in thresholds:
                values[f"fast_{p:g}"].append(1.0 if tm.fast_p_flags[p] else 0.0)
        per_task[task_id] = {
            name: {"best": metrics.best_at_k(vals, k), "avg": metrics.avg_at_k(vals, k)}
            for name, vals in values.items()
        }

    n_tasks = len(per_task)
    aggregate_rows = []
    for name in metric_names:
        best = sum(per_task[t][name]["best"] for t in per_task) / n_tasks
        avg = sum(per_task[t][name]["avg"] for t in per_task) / n_tasks
        aggregate_rows.append((name, best, avg))

    header = f"{'metric':<14} {f'best@{k}':>12} {f'avg@{k}':>12}"
    lines = [f"run {run_id} step {step}, {n_tasks} task(s), {turns} turn(s)",
             header, "-" * len(header)]
    for name, best, avg in aggregate_rows:
        lines.append(f"{name:<14} {best:>12.4f} {avg:>12.4f}")
    text = "\n".join(lines)
    print(text)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "config", "task", "value"])
    for task_id in sorted(per_task):
        for name in metric_names:
            writer.writerow([name, f"best@{k}", task_id, repr(per_task[task_id][name]["best"])])
            writer.writerow([name, f"avg@{k}", task_id, repr(per_task[task_id][name]["avg"])])
    doc = {"run_id": run_id, "step": step, "k": k, "turns": turns,
           "aggregate": {name: {"best": best, "avg": avg}
                         for name, best, avg in aggregate_rows},
           "per_task": per_task}

    reports = _reports_dir(store, run_id)
    stem = f"eval_step{step}_k{k}_t{turns}"
    (reports / f"{stem}.txt").write_text(text + "\n", "utf-8")
    (reports / f"{stem}.csv").write_text(buf.getvalue(), "utf-8")
    (reports / f"{stem}.json").write_text(json.dumps(doc, indent=2, sort_keys=True), "utf-8")
    print(f"reports written to {reports}/{stem}.{{txt,csv,json}}")
    return EXIT_OK


def cmd_scaling(run_id: str, budget: int, configs: Sequence[tuple[int, int]],
                runs_dir: str = "runs", step: int | None = None) -> int:
    store = RunStore(runs_dir)
    steps = store.steps(run_id)
    if not steps:
        raise ShortfallError("<all>", f"run {run_id!r} holds no turns")
    if step is None:
        step = steps[-1]
    by_task = store.trajectories(run_id, step)
    trajectories_by_task = {
        task_id: [_rows_to_evals(t) for t in trajs]
        for task_id, trajs in by_task.items()
    }
    report = metrics.scaling_report(trajectories_by_task, configs, budget)
    print(report.to_text())

    reports = _reports_dir(store, run_id)
    stem = f"scaling_step{step}_budget{budget}"
    (reports / f"{stem}.txt").write_text(report.to_text() + "\n", "utf-8")
    (reports / f"{stem}.csv").write_text(report.to_csv(), "utf-8")
    (reports / f"{stem}.json").write_text(report.to_json(), "utf-8")
    print(f"reports written to {reports}/{stem}.{{txt,csv,json}}")
    return EXIT_OK


def cmd_gradcheck(seed: int, trials: int, h: float = 1e-5) -> int:
    if trials == 0:
        print("warning: 0 trials requested; vacuous pass")
        return EXIT_OK
    worst = 0.0
    worst_trial = -1
    for trial in range(trials):
        policy, batch, old, ref = grpo.random_check_case(seed + trial)
        for beta in (0.0, 0.01):
            cfg = grpo.GrpoConfig(beta=beta)
            report = grpo.grad_check(policy, batch, cfg, h=h, old=old, ref=ref)
            if report.max_rel_error > worst:
                worst = report.max_rel_error
                worst_trial = trial
    print(f"gradcheck: {trials} trial(s), max_rel_error={worst:.3e} "
          f"(worst trial {worst_trial}), tolerance {GRAD_CHECK_TOLERANCE:.0e}")
    if worst >= GRAD_CHECK_TOLERANCE:
        print("gradcheck FAILED")
        return EXIT_CHECK_FAILED
    print("gradcheck passed")
    return EXIT_OK


def cmd_guard_lint(path: str, rules_path: str | None = None, strict: bool = False) -> int:
    try:
        source = Path(path).read_text("utf-8")
    except FileNotFoundError:
        raise ConfigError(f"candidate file not found: {path}") from None
    if rules_path is not None:
        rules = rules_from_json(Path(rules_path).read_text("utf-8"))
    else:
        rules = default_rules(strict=strict)
    verdict = check_candidate(source, rules)
    if verdict.accepted:
        print(f"{path}: accepted")
        return EXIT_OK
    for violation in verdict.violations:
        start, end = violation.span
        print(f"{path}: violation {violation.rule_id} at bytes [{start}, {end})")
    return EXIT_CHECK_FAILED


def _parse_thresholds(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"invalid thresholds list: {text!r}") from None
    if any(v <= 0 for v in values):
        raise ConfigError("thresholds must be positive")
    return values


def _parse_configs(text: str) -> list[tuple[int, int]]:
    configs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            traj, turns = part.split("x")
            configs.append((int(traj), int(turns)))
        except ValueError:
            raise ConfigError(f"invalid config {part!r}; expected TRAJxTURNS") from None
    if not configs:
        raise ConfigError("at least one config is required")
    return configs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelrl",
        description="Multi-turn RL rollout, evaluation, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_roll = sub.add_parser("rollout", help="run training steps and persist them")
    p_roll.add_argument("--config", required=True, help="path to the JSON run config")
    p_roll.add_argument("--steps", type=int, default=1, help="number of training steps")
    p_roll.add_argument("--run-id", default=None, help="run id (default: timestamped)")
    p_roll.add_argument("--runs-dir", default="runs", help="store root directory")
    p_roll.add_argument("--parallelism", type=int, default=None,
                        help="cap on concurrent trajectories")

    p_eval = sub.add_parser("eval", help="trajectory metrics with best@k / avg@k")
    p_eval.add_argument("--run-id", required=True)
    p_eval.add_argument("--runs-dir", default="runs")
    p_eval.add_argument("--k", type=int, default=16)
    p_eval.add_argument("--turns", type=int, default=8)
    p_eval.add_argument("--thresholds", default="1.0,1.5",
                        help="comma-separated fast_p thresholds")
    p_eval.add_argument("--step", type=int, default=None, help="step to evaluate")

    p_scale = sub.add_parser("scaling", help="fixed-budget parallel-vs-sequential table")
    p_scale.add_argument("--run-id", required=True)
    p_scale.add_argument("--runs-dir", default="runs")
    p_scale.add_argument("--budget", type=int, required=True)
    p_scale.add_argument("--configs", required=True,
                         help="comma-separated TRAJxTURNS, e.g. 16x8,32x4,128x1")
    p_scale.add_argument("--step", type=int, default=None)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the objective")
    p_grad.add_argument("--seed", type=int, default=7)
    p_grad.add_argument("--trials", type=int, default=100)

    p_lint = sub.add_parser("guard-lint", help="run guard rules on a candidate file")
    p_lint.add_argument("file", help="candidate source file")
    p_lint.add_argument("--rules", default=None, help="JSON rule set to use instead")
    p_lint.add_argument("--strict", action="store_true",
                        help="ban the pass token outright")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rollout":
            if args.steps < 1:
                raise ConfigError("--steps must be >= 1")
            return cmd_rollout(args.config, args.steps, run_id=args.run_id,
                               runs_dir=args.runs_dir, parallelism=args.parallelism)
        if args.command == "eval":
            return cmd_eval(args.run_id, args.k, args.turns,
                            _parse_thresholds(args.thresholds),
                            runs_dir=args.runs_dir, step=args.step)
        if args.command == "scaling":
            return cmd_scaling(args.run_id, args.budget, _parse_configs(args.configs),
                               runs_dir=args.runs_dir, step=args.step)
        if args.command == "gradcheck":
            if args.trials < 0:
                raise ConfigError("--trials must be >= 0")
            return cmd_gradcheck(args.seed, args.trials)
        if args.command == "guard-lint":
            return cmd_guard_lint(args.file, rules_path=args.rules, strict=args.strict)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunNotFoundError as exc:
        print(f"data shortfall: unknown run {exc}", file=sys.stderr)
        return EXIT_SHORTFALL
    except ShortfallError as exc:
        print(f"data shortfall: {exc}", file=sys.stderr)
        return EXIT_SHORTFALL


if __name__ == "__main__":
    sys.exit(main())
