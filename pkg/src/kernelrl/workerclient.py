"""Host-side client for the out-of-process evaluation worker.

Speaks newline-delimited JSON over the worker's stdio: one request line out,
one response line back, ids matched. The worker evaluates real candidate
programs against reference implementations; this client adapts that wire
protocol to the ExecutorContract used by the rollout engine. Guard checks are
not the worker's job; they run host-side before dispatch.
"""

from __future__ import annotations

import json
import subprocess
import threading
from typing import Mapping, Sequence

from .errors import ContractViolation, ExecutorUnavailable
from .scoring import EvalResult, EvalStatus

REQUEST_FIELDS = ("id", "op", "reference_source", "candidate_source", "entry_class",
                  "reference_class", "trials", "timing_iters", "timeout_s", "seed",
                  "rtol", "atol")


class WorkerExecutor:
    """ExecutorContract implementation backed by a worker subprocess."""

    max_parallelism = 1  # one stdio pipe; run several executors for parallelism

    def __init__(self, command: Sequence[str], references: Mapping[str, str], *,
                 entry_class: str = "ModelNew", reference_class: str = "Model",
                 trials: int = 5, timing_iters: int = 20, timeout_s: float = 60.0,
                 rtol: float = 1e-4, atol: float = 1e-4):
        if not command:
            raise ContractViolation("worker command must be nonempty")
        self.command = list(command)
        self.references = dict(references)
        self.entry_class = entry_class
        self.reference_class = reference_class
        self.trials = trials
        self.timing_iters = timing_iters
        self.timeout_s = timeout_s
        self.rtol = rtol
        self.atol = atol
        self._proc: subprocess.Popen | None = None
        self._counter = 0
        self._lock = threading.Lock()

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def evaluate(self, task_id: str, kernel_source: str, seed: int) -> EvalResult:
        if task_id not in self.references:
            raise ContractViolation(f"no reference source for task {task_id!r}")
        with self._lock:
            self._counter += 1
            request_id = f"{task_id}:{seed}:{self._counter}"
            request = {
                "id": request_id,
                "op": "evaluate",
                "reference_source": self.references[task_id],
                "candidate_source": kernel_source,
                "entry_class": self.entry_class,
                "reference_class": self.reference_class,
                "trials": self.trials,
                "timing_iters": self.timing_iters,
                "timeout_s": self.timeout_s,
                "seed": seed,
                "rtol": self.rtol,
                "atol": self.atol,
            }
            proc = self._ensure_proc()
            assert proc.stdin is not None and proc.stdout is not None
            try:
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ExecutorUnavailable(f"worker pipe failed: {exc}",
                                          task_id=task_id) from exc
            if not line:
                raise ExecutorUnavailable("worker closed its output stream",
                                          task_id=task_id)
            response = json.loads(line)
        if response.get("id") != request_id:
            raise ExecutorUnavailable(
                f"worker response id {response.get('id')!r} does not match "
                f"request id {request_id!r}", task_id=task_id)
        return response_to_result(response)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            assert self._proc.stdin is not None
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self) -> "WorkerExecutor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def response_to_result(response: Mapping[str, object]) -> EvalResult:
    """Map a wire response onto an EvalResult, enforcing its invariants."""
    status = EvalStatus(str(response["status"]))
    error_message = str(response.get("error_message") or "")
    if status == EvalStatus.correct:
        runtime_ms = response.get("runtime_ms")
        baseline_ms = response.get("baseline_ms")
        if runtime_ms is None or baseline_ms is None:
            raise ContractViolation("correct response must carry both timings")
        return EvalResult(status, baseline_ms=float(baseline_ms),
                          runtime_ms=float(runtime_ms))
    return EvalResult(status, error_message=error_message or status.value)
