import itertools
import math
import random
from fractions import Fraction

import pytest

from kernelrl.errors import ContractViolation, ShortfallError
from kernelrl.metrics import (GroupEstimate, avg_at_k, best_at_k, best_at_k_exact,
                              pass_at_k, scaling_report, trajectory_metric)
from kernelrl.scoring import EvalResult, EvalStatus


def correct(speedup):
    return EvalResult(EvalStatus.correct, baseline_ms=speedup, runtime_ms=1.0)


def failed(status=EvalStatus.incorrect):
    return EvalResult(status, error_message="x")


def enumerate_best_at_k(values, k):
    """Independent oracle: exact mean of max over every k-subset."""
    total = Fraction(0)
    count = 0
    for subset in itertools.combinations(values, k):
        total += Fraction(max(subset))
        count += 1
    return total / count


def enumerate_pass_at_k(n, c, k):
    hits = 0
    total = 0
    flags = [1] * c + [0] * (n - c)
    for subset in itertools.combinations(range(n), k):
        total += 1
        hits += 1 if any(flags[i] for i in subset) else 0
    return Fraction(hits, total)


class TestTrajectoryMetric:
    def test_all_incorrect(self):
        metric = trajectory_metric([failed(), failed(EvalStatus.compile_error)])
        assert metric.correct is False
        assert metric.performance == 0.0

    def test_best_turn_wins(self):
        evals = [failed(EvalStatus.compile_error), correct(1.06), correct(0.61),
                 correct(1.19), correct(1.93)]
        metric = trajectory_metric(evals)
        assert metric.correct is True
        assert metric.performance == pytest.approx(1.93)

    def test_thresholds(self):
        metric = trajectory_metric([correct(1.19)], thresholds=[1.0, 1.5])
        assert metric.fast_p_flags == {1.0: True, 1.5: False}

    def test_appending_turns_never_lowers_performance(self):
        rng = random.Random(4)
        evals = []
        last = 0.0
        for _ in range(30):
            evals.append(correct(rng.uniform(0.1, 5)) if rng.random() < 0.6 else failed())
            perf = trajectory_metric(evals).performance
            assert perf >= last
            last = perf

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            trajectory_metric([])


class TestPassAtK:
    def test_examples(self):
        assert pass_at_k(4, 2, 2) == pytest.approx(5 / 6, abs=1e-15)
        assert pass_at_k(10, 0, 5) == 0.0
        assert pass_at_k(10, 10, 5) == 1.0

    def test_matches_enumeration_for_small_n(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    want = float(enumerate_pass_at_k(n, c, k))
                    assert pass_at_k(n, c, k) == pytest.approx(want, abs=1e-12)

    def test_large_n_stable(self):
        for k in (1, 10, 100, 5000, 10000):
            value = pass_at_k(10000, 137, k)
            assert math.isfinite(value)
            assert 0.0 <= value <= 1.0
        assert pass_at_k(10000, 137, 10000) == 1.0

    def test_bounds_enforced(self):
        with pytest.raises(ContractViolation):
            pass_at_k(4, 5, 2)
        with pytest.raises(ContractViolation):
            pass_at_k(4, 2, 5)


class TestBestAtK:
    def test_example(self):
        assert best_at_k([0.0, 1.0, 2.0, 3.0], 2) == pytest.approx(14 / 6, abs=1e-15)

    def test_k_equals_n_is_max(self):
        values = [0.3, 2.5, 1.1]
        assert best_at_k(values, 3) == max(values)

    def test_k_one_is_mean(self):
        values = [0.3, 2.5, 1.1, 4.0]
        assert best_at_k(values, 1) == pytest.approx(sum(values) / 4, abs=1e-12)

    def test_matches_enumeration_exactly(self):
        rng = random.Random(8)
        for n in range(1, 9):
            for k in range(1, n + 1):
                values = [rng.uniform(0, 4) for _ in range(n)]
                want = enumerate_best_at_k(values, k)
                assert best_at_k_exact(values, k) == want  # exact rational equality
                assert best_at_k(values, k) == float(want)

    def test_binary_values_equal_pass_at_k(self):
        rng = random.Random(9)
        for _ in range(100):
            n = rng.randint(1, 12)
            values = [float(rng.random() < 0.4) for _ in range(n)]
            c = int(sum(values))
            k = rng.randint(1, n)
            assert best_at_k(values, k) == pytest.approx(pass_at_k(n, c, k), abs=1e-12)

    def test_monotone_in_k(self):
        rng = random.Random(10)
        values = [rng.uniform(0, 5) for _ in range(9)]
        estimates = [best_at_k(values, k) for k in range(1, 10)]
        assert estimates == sorted(estimates)

    def test_large_population_path(self):
        values = [float(i) for i in range(500)]
        big = best_at_k(values, 10)
        assert math.isfinite(big)
        # unbiased: E[max of 10 of 0..499] = (10/11) * 500 - something near 454.5
        assert 440 < big < 460

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            best_at_k([], 1)


class TestAvgAtK:
    def test_mean(self):
        assert avg_at_k([0.0, 1.0, 2.0, 3.0], 2) == 1.5

    def test_constant(self):
        assert avg_at_k([2.0, 2.0], 2) == 2.0

    def test_single(self):
        assert avg_at_k([3.3], 1) == 3.3


class TestGroupEstimate:
    def test_k_bounds(self):
        with pytest.raises(ContractViolation):
            GroupEstimate("performance", k=5, n=4, estimate=0.0, method="closed_form")


class TestScalingReport:
    def trajectories(self):
        # two tasks, four trajectories of two turns each
        def traj(*speedups):
            return [correct(s) if s else failed() for s in speedups]
        return {
            "task-a": [traj(1.0, 2.0), traj(0, 1.5), traj(0, 0), traj(1.2, 1.2)],
            "task-b": [traj(0, 4.0), traj(0, 0), traj(2.0, 2.0), traj(0, 1.0)],
        }

    def test_budget_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            scaling_report(self.trajectories(), [(3, 2)], 8)

    def test_shortfall_names_task(self):
        with pytest.raises(ShortfallError) as info:
            scaling_report(self.trajectories(), [(8, 1)], 8)
        assert info.value.task_id in ("task-a", "task-b")

    def test_values(self):
        report = scaling_report(self.trajectories(), [(4, 2), (2, 4)][:1], 8)
        row = report.rows[0]
        assert row.per_task_performance["task-a"] == 2.0
        assert row.per_task_performance["task-b"] == 4.0
        assert row.mean_performance == 3.0
        assert row.correctness == 1.0

    def test_more_turns_beat_more_trajectories_for_greedy(self):
        from kernelrl.context import PromptBudget
        from kernelrl.rollout import RolloutConfig, TaskSpec, run_training_step
        from kernelrl.simenv import (SimEnvExecutor, gen_tasks, render_task_text,
                                     scripted_policy, synth_rules)
        synth = gen_tasks(21, 4, "mixed")
        specs = [TaskSpec(t.task_id, render_task_text(t)) for t in synth]
        cfg = RolloutConfig(m=4, n=4, gamma=0.4, agg_mode="sum",
                            budget=PromptBudget(10**9), rules=synth_rules())
        samples, _ = run_training_step(specs, scripted_policy("greedy"),
                                       SimEnvExecutor(synth), cfg)
        by_task: dict = {}
        for s in samples:
            by_task.setdefault(s.task_id, {}).setdefault(s.trajectory_index, []).append(s.eval)
        trajectories = {t: [trajs[i] for i in sorted(trajs)] for t, trajs in by_task.items()}
        report = scaling_report(trajectories, [(2, 2), (4, 1)], 4)
        deep, wide = report.rows
        assert deep.mean_performance >= wide.mean_performance

    def test_output_formats(self):
        report = scaling_report(self.trajectories(), [(4, 2)], 8)
        text = report.to_text()
        assert "#traj" in text and "performance" in text
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "metric,config,task,value"
        assert "performance,4x2,task-a" in csv_text
        import json
        doc = json.loads(report.to_json())
        assert doc["budget"] == 8
        assert doc["rows"][0]["num_trajectories"] == 4
