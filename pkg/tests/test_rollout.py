import dataclasses

import pytest

from kernelrl.context import FEEDBACK_TEMPLATES, PromptBudget, TurnRecord
from kernelrl.errors import ContractViolation, ExecutorUnavailable
from kernelrl.rollout import (GenerationResult, RolloutConfig, TaskSpec, Trajectory,
                              clipping_ratio, derive_seed, not_okay_ratio,
                              parse_completion, run_training_step, split_trajectory)
from kernelrl.scoring import EvalResult, EvalStatus
from kernelrl.simenv import (SimEnvExecutor, gen_tasks, render_task_text,
                             scripted_policy, synth_rules)

BUDGET = PromptBudget(10**9)


def make_cfg(**overrides):
    base = dict(m=2, n=3, gamma=0.4, agg_mode="sum", budget=BUDGET,
                rules=synth_rules(), parallelism=4)
    base.update(overrides)
    return RolloutConfig(**base)


def simenv_setup(count=2, seed=1, difficulty="mixed"):
    synth = gen_tasks(seed, count, difficulty)
    specs = [TaskSpec(t.task_id, render_task_text(t)) for t in synth]
    return specs, SimEnvExecutor(synth)


def turn_record(index, score_speedup=None, status=EvalStatus.incorrect):
    if score_speedup is not None:
        result = EvalResult(EvalStatus.correct, baseline_ms=score_speedup, runtime_ms=1.0)
    else:
        result = EvalResult(status, error_message="nope")
    return TurnRecord(kernel_source=f"opt: o{index}", cot_summary=f"summary {index}",
                      eval=result, turn_index=index, cot_full=f"Okay, turn {index}.",
                      response_tokens=10, truncated=False)


class TestSplitTrajectory:
    def test_single_turn(self):
        traj = Trajectory("t", [turn_record(1, score_speedup=1.0)], "p", 0)
        samples = split_trajectory(traj, 0.4, "sum", task_text="task text", budget=BUDGET)
        assert len(samples) == 1
        assert samples[0].aggregated_reward == pytest.approx(samples[0].score)

    def test_discounted_rewards_attached(self):
        # scores 0, 1.3, 0.5 via speedups (1.0 -> 1.3, 0.2 -> 0.5)
        turns = [turn_record(1), turn_record(2, score_speedup=1.0),
                 turn_record(3, score_speedup=0.2)]
        traj = Trajectory("t", turns, "p", 0)
        samples = split_trajectory(traj, 0.4, "sum", task_text="task", budget=BUDGET)
        assert [s.score for s in samples] == pytest.approx([0.0, 1.3, 0.5])
        assert [s.aggregated_reward for s in samples] == pytest.approx([0.6, 1.5, 0.5])

    def test_context_contains_prior_turns_only(self):
        turns = [turn_record(1), turn_record(2, score_speedup=2.0), turn_record(3)]
        traj = Trajectory("t", turns, "p", 0)
        samples = split_trajectory(traj, 0.4, "sum", task_text="task", budget=BUDGET)
        assert samples[0].context.included_turns == ()
        assert samples[2].context.included_turns == (1, 2)
        assert "summary 1" in samples[2].context.text
        assert "summary 2" in samples[2].context.text
        assert "summary 3" not in samples[2].context.text
        incorrect_line = FEEDBACK_TEMPLATES[EvalStatus.incorrect].format(error_message="nope")
        assert incorrect_line in samples[2].context.text


class TestRunTrainingStep:
    def test_sample_count_is_tasks_m_n(self):
        specs, executor = simenv_setup(count=3)
        samples, _ = run_training_step(specs, scripted_policy("greedy"), executor,
                                       make_cfg(m=2, n=3))
        assert len(samples) == 3 * 2 * 3

    def test_failed_turns_still_produce_samples(self):
        specs, executor = simenv_setup(count=2)
        samples, stats = run_training_step(specs, scripted_policy("hacker"), executor,
                                           make_cfg(m=2, n=2))
        assert len(samples) == 2 * 2 * 2
        assert all(s.eval.status == EvalStatus.guard_rejected for s in samples)
        assert all(s.score == 0.0 for s in samples)
        assert stats.correct_rate == 0.0

    def test_per_task_advantages_mean_zero(self):
        specs, executor = simenv_setup(count=3)
        samples, _ = run_training_step(specs, scripted_policy("explorer"), executor,
                                       make_cfg(m=4, n=2))
        for spec in specs:
            advantages = [s.advantage for s in samples if s.task_id == spec.task_id]
            assert abs(sum(advantages) / len(advantages)) < 1e-9

    def test_deterministic_across_scheduling(self):
        specs, executor = simenv_setup(count=2)
        first, _ = run_training_step(specs, scripted_policy("explorer"), executor,
                                     make_cfg(parallelism=1), run_seed=42)
        second, _ = run_training_step(specs, scripted_policy("explorer"), executor,
                                      make_cfg(parallelism=8), run_seed=42)
        assert len(first) == len(second)
        for a, b in zip(first, second):
            assert a == b

    def test_guard_rejection_feeds_incorrect_template_to_next_turn(self):
        specs, executor = simenv_setup(count=1)
        samples, _ = run_training_step(specs, scripted_policy("hacker"), executor,
                                       make_cfg(m=1, n=2))
        second_turn = samples[1]
        assert "Your previous answer was incorrect." in second_turn.context.text
        assert "guard rules" in second_turn.context.text

    def test_single_sample_group_gets_zero_advantage(self):
        specs, executor = simenv_setup(count=1)
        samples, _ = run_training_step(specs, scripted_policy("greedy"), executor,
                                       make_cfg(m=1, n=1))
        assert len(samples) == 1
        assert samples[0].advantage == 0.0

    def test_sixteen_by_four_runs(self):
        specs, executor = simenv_setup(count=1)
        cfg = make_cfg(m=16, n=4)
        samples, _ = run_training_step(specs, scripted_policy("greedy"), executor, cfg)
        assert len(samples) == 64

    def test_policy_failure_becomes_parse_error_turn(self):
        class FailingPolicy:
            policy_id = "boom"

            def generate(self, prompt, seed, temperature, max_response_tokens):
                raise RuntimeError("model fell over")

        specs, executor = simenv_setup(count=1)
        samples, stats = run_training_step(specs, FailingPolicy(), executor,
                                           make_cfg(m=1, n=2))
        assert [s.eval.status for s in samples] == [EvalStatus.parse_error] * 2
        assert all("model fell over" in s.eval.error_message for s in samples)
        assert stats.mean_reward == 0.0

    def test_executor_failure_aborts_with_diagnostics(self):
        class DeadExecutor:
            def evaluate(self, task_id, kernel_source, seed):
                raise OSError("gpu on fire")

        specs, _ = simenv_setup(count=1)
        with pytest.raises(ExecutorUnavailable) as info:
            run_training_step(specs, scripted_policy("greedy"), DeadExecutor(),
                              make_cfg(m=1, n=2))
        assert info.value.task_id == specs[0].task_id
        assert info.value.turn_index == 1

    def test_empty_tasks_rejected(self):
        with pytest.raises(ContractViolation):
            run_training_step([], scripted_policy("greedy"), None, make_cfg())

    def test_max_response_tokens_is_step_scoped(self):
        specs, executor = simenv_setup(count=1)
        wide, _ = run_training_step(specs, scripted_policy("greedy"), executor,
                                    make_cfg(m=1, n=1), run_seed=1)
        tight, _ = run_training_step(specs, scripted_policy("greedy"), executor,
                                     make_cfg(m=1, n=1, max_response_tokens=5), run_seed=1)
        assert not wide[0].response.truncated
        assert tight[0].response.truncated
        assert tight[0].response.response_tokens == 5


class TestMonitors:
    def test_not_okay_ratio_counts_prefix_misses(self):
        cots = ["Okay, fine.", "Okay Amigos, so I need to go fast.",
                "Okay, good.", "Okay Holy crap, optimize!"]
        assert not_okay_ratio(cots) == 0.5

    def test_not_okay_ratio_all_good(self):
        assert not_okay_ratio(["Okay, a.", "Okay, b."]) == 0.0

    def test_not_okay_ratio_empty(self):
        assert not_okay_ratio([]) == 0.0

    def test_clipping_ratio(self):
        gens = [GenerationResult("", "", "", 10, truncated=(i == 3)) for i in range(8)]
        assert clipping_ratio(gens) == 0.125

    def test_clipping_ratio_extremes(self):
        all_cut = [GenerationResult("", "", "", 10, True)] * 4
        none_cut = [GenerationResult("", "", "", 10, False)] * 4
        assert clipping_ratio(all_cut) == 1.0
        assert clipping_ratio(none_cut) == 0.0
        assert clipping_ratio([]) == 0.0


class TestDeriveSeed:
    def test_stable_values(self):
        assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
        assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
        assert 0 <= derive_seed("x") < 2**63


class TestParseCompletion:
    def test_last_fenced_block_is_kernel(self):
        text = ("Okay, thinking...\n```python\nfirst\n```\nmore thought\n"
                "```python\nopt: tile\n```\nI switched to tiling.")
        gen = parse_completion(text, 16384)
        assert gen.kernel_source == "opt: tile"
        assert gen.cot_summary == "I switched to tiling."
        assert gen.cot_full == text
        assert not gen.truncated

    def test_no_block_raises(self):
        from kernelrl.errors import PolicyError
        with pytest.raises(PolicyError):
            parse_completion("no code here", 16384)

    def test_truncation_flag(self):
        text = "```\nopt: tile\n```\n" + "word " * 100
        gen = parse_completion(text, 10)
        assert gen.truncated and gen.response_tokens == 10
