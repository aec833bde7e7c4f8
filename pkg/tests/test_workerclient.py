import importlib.util
import sys
from pathlib import Path

import pytest

from kernelrl.errors import ContractViolation, ExecutorUnavailable
from kernelrl.scoring import EvalStatus
from kernelrl.workerclient import WorkerExecutor, response_to_result

FAKE_WORKER = [sys.executable, str(Path(__file__).parent / "fake_worker.py")]
REFS = {"task-a": "class Model: ..."}


class TestWorkerExecutor:
    def test_correct_result(self):
        with WorkerExecutor(FAKE_WORKER, REFS) as executor:
            result = executor.evaluate("task-a", "candidate", seed=1)
        assert result.status == EvalStatus.correct
        assert result.speedup == 2.5

    def test_incorrect_result_carries_message(self):
        with WorkerExecutor(FAKE_WORKER, REFS) as executor:
            result = executor.evaluate("task-a", "fail this one", seed=1)
        assert result.status == EvalStatus.incorrect
        assert "0.5" in result.error_message
        assert result.runtime_ms is None

    def test_sequential_requests_reuse_the_process(self):
        with WorkerExecutor(FAKE_WORKER, REFS) as executor:
            first = executor.evaluate("task-a", "one", seed=1)
            second = executor.evaluate("task-a", "two", seed=2)
            proc = executor._proc
        assert first.status == second.status == EvalStatus.correct
        assert proc is not None

    def test_unknown_task_rejected(self):
        executor = WorkerExecutor(FAKE_WORKER, REFS)
        with pytest.raises(ContractViolation):
            executor.evaluate("task-zzz", "x", seed=0)

    def test_dead_worker_raises_executor_unavailable(self):
        with WorkerExecutor(FAKE_WORKER, REFS) as executor:
            with pytest.raises(ExecutorUnavailable):
                executor.evaluate("task-a", "die", seed=0)

    def test_worker_restarts_after_death(self):
        with WorkerExecutor(FAKE_WORKER, REFS) as executor:
            with pytest.raises(ExecutorUnavailable):
                executor.evaluate("task-a", "die", seed=0)
            result = executor.evaluate("task-a", "recovered", seed=1)
        assert result.status == EvalStatus.correct

    def test_id_mismatch_rejected(self):
        with WorkerExecutor(FAKE_WORKER, REFS) as executor:
            with pytest.raises(ExecutorUnavailable):
                executor.evaluate("task-a", "wrong-id", seed=0)


class TestResponseMapping:
    def test_correct_requires_timings(self):
        with pytest.raises(ContractViolation):
            response_to_result({"id": "x", "status": "correct", "error_message": "",
                                "runtime_ms": None, "baseline_ms": None})

    def test_error_status_defaults_message(self):
        result = response_to_result({"id": "x", "status": "runtime_error",
                                     "error_message": "", "runtime_ms": None,
                                     "baseline_ms": None})
        assert result.status == EvalStatus.runtime_error
        assert result.error_message == "runtime_error"


REAL_REFERENCE = '''
import numpy as np


class Model:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        return x * self.scale


def get_init_inputs():
    return [3.0]


def get_inputs():
    return [np.random.rand(1000)]
'''

REAL_CANDIDATE = '''
class ModelNew:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        return x * self.scale
'''


@pytest.mark.skipif(importlib.util.find_spec("evalworker") is None,
                    reason="worker package not installed")
class TestAgainstRealWorker:
    """Optional integration path; the primary suite never requires it."""

    def test_full_wire_round_trip(self):
        command = [sys.executable, "-m", "evalworker"]
        refs = {"scale-task": REAL_REFERENCE}
        with WorkerExecutor(command, refs, trials=2, timing_iters=3,
                            timeout_s=30.0) as executor:
            good = executor.evaluate("scale-task", REAL_CANDIDATE, seed=4)
            bad = executor.evaluate("scale-task", "class ModelNew(\n", seed=4)
        assert good.status == EvalStatus.correct
        assert good.speedup is not None and good.speedup > 0
        assert bad.status == EvalStatus.compile_error
