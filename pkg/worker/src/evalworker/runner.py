"""Candidate evaluation pipeline, isolated in a child process per request.

Pipeline: load the candidate module (import failure is a compile error), load
the reference and its input generators, instantiate both classes with the
reference's documented constructor arguments, run randomized-input correctness
trials with the candidate executed FIRST and its outputs materialized before
the reference runs (forecloses output-recycling hacks), then time both sides
and report median wall-clock milliseconds.

A crash, hang, or interpreter corruption dies with the child; the parent
always produces a response and stays healthy for the next request.
"""

from __future__ import annotations

import multiprocessing
import random
import statistics
import time
import traceback
from typing import Callable

import numpy as np

from .protocol import EvalRequest, EvalResponse

WARMUP_CALLS = 3
MAX_ERROR_CHARS = 800

_mp = multiprocessing.get_context("fork")


class _Outcome(Exception):
    """Terminates the pipeline early with a non-correct status."""

    def __init__(self, status: str, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _excerpt(limit: int = MAX_ERROR_CHARS) -> str:
    text = traceback.format_exc(limit=4).strip()
    return text[-limit:]


def _seed_all(seed: int, trial: int) -> None:
    derived = (seed * 1_000_003 + trial) % (2**31 - 1)
    random.seed(derived)
    np.random.seed(derived)


def _load_module(source: str, label: str, failure_status: str) -> dict:
    namespace: dict = {"__name__": f"evalworker_{label}"}
    try:
        exec(compile(source, f"<{label}>", "exec"), namespace)
    except BaseException:
        raise _Outcome(failure_status, f"{label} failed to load:\n{_excerpt()}")
    return namespace


def _instantiate(namespace: dict, class_name: str, init_args: list, label: str):
    cls = namespace.get(class_name)
    if cls is None:
        raise _Outcome("compile_error", f"{label} does not define class {class_name}")
    try:
        return cls(*init_args)
    except BaseException:
        raise _Outcome("runtime_error",
                       f"instantiating {class_name} failed:\n{_excerpt()}")


def _forward_callable(instance, label: str) -> Callable:
    forward = getattr(instance, "forward", None)
    if callable(forward):
        return forward
    if callable(instance):
        return instance
    raise _Outcome("runtime_error", f"{label} instance is not callable")


def _materialize(outputs) -> list[np.ndarray]:
    """Copy outputs into fresh arrays so later code cannot recycle buffers."""
    parts = outputs if isinstance(outputs, (tuple, list)) else [outputs]
    return [np.array(part, copy=True) for part in parts]


def _compare(candidate_out: list[np.ndarray], reference_out: list[np.ndarray],
             rtol: float, atol: float, trial: int) -> None:
    if len(candidate_out) != len(reference_out):
        raise _Outcome("incorrect", (
            f"trial {trial}: candidate returned {len(candidate_out)} outputs, "
            f"reference returned {len(reference_out)}"
        ))
    for index, (got, want) in enumerate(zip(candidate_out, reference_out)):
        if got.shape != want.shape:
            raise _Outcome("incorrect", (
                f"trial {trial}: output {index} shape {got.shape} != {want.shape}"
            ))
        got_f = got.astype(np.float64, copy=False)
        want_f = want.astype(np.float64, copy=False)
        ok = np.abs(got_f - want_f) <= atol + rtol * np.abs(want_f)
        if not bool(np.all(ok)):
            diff = np.abs(got_f - want_f)
            max_diff = float(np.nanmax(diff)) if diff.size else float("nan")
            if np.isnan(diff).any():
                max_diff = float("nan")
            raise _Outcome("incorrect", (
                f"trial {trial}: output {index} mismatch, "
                f"max absolute difference: {max_diff}"
            ))


def _median_call_ms(fn: Callable, inputs: list, iters: int) -> float:
    for _ in range(WARMUP_CALLS):
        fn(*inputs)
    times = []
    for _ in range(iters):
        start = time.perf_counter_ns()
        fn(*inputs)
        times.append((time.perf_counter_ns() - start) / 1e6)
    return statistics.median(times)


def _evaluate_in_child(req: EvalRequest) -> EvalResponse:
    # (1) candidate module: import failure is a compile error
    candidate_ns = _load_module(req.candidate_source, "candidate source", "compile_error")
    # reference side: trusted, but its contract is still checked
    reference_ns = _load_module(req.reference_source, "reference source", "compile_error")
    get_inputs = reference_ns.get("get_inputs")
    get_init_inputs = reference_ns.get("get_init_inputs")
    if not callable(get_inputs) or not callable(get_init_inputs):
        raise _Outcome("compile_error",
                       "reference source must define get_inputs() and get_init_inputs()")

    _seed_all(req.seed, -1)
    try:
        init_args = list(get_init_inputs())
    except BaseException:
        raise _Outcome("runtime_error", f"get_init_inputs() failed:\n{_excerpt()}")

    # (2) instantiate with the task's documented constructor arguments
    candidate = _instantiate(candidate_ns, req.entry_class, init_args, "candidate")
    reference = _instantiate(reference_ns, req.reference_class, init_args, "reference")
    candidate_fn = _forward_callable(candidate, "candidate")
    reference_fn = _forward_callable(reference, "reference")

    # (3) randomized-input correctness trials, candidate first
    for trial in range(req.trials):
        _seed_all(req.seed, trial)
        try:
            inputs = list(get_inputs())
        except BaseException:
            raise _Outcome("runtime_error", f"get_inputs() failed:\n{_excerpt()}")
        try:
            candidate_raw = candidate_fn(*inputs)
        except BaseException:
            raise _Outcome("runtime_error",
                           f"candidate raised on trial {trial}:\n{_excerpt()}")
        candidate_out = _materialize(candidate_raw)  # before the reference runs
        try:
            reference_out = _materialize(reference_fn(*inputs))
        except BaseException:
            raise _Outcome("runtime_error",
                           f"reference raised on trial {trial}:\n{_excerpt()}")
        _compare(candidate_out, reference_out, req.rtol, req.atol, trial)

    # (4) timing: candidate first, then reference; medians over timing_iters
    _seed_all(req.seed, req.trials)
    inputs = list(get_inputs())
    try:
        runtime_ms = _median_call_ms(candidate_fn, inputs, req.timing_iters)
        baseline_ms = _median_call_ms(reference_fn, inputs, req.timing_iters)
    except BaseException:
        raise _Outcome("runtime_error", f"timing failed:\n{_excerpt()}")
    runtime_ms = max(runtime_ms, 1e-9)  # zero wall time would break the speedup ratio
    baseline_ms = max(baseline_ms, 1e-9)
    return EvalResponse(id=req.id, status="correct", error_message="",
                        runtime_ms=runtime_ms, baseline_ms=baseline_ms)


def _child_main(req: EvalRequest, conn) -> None:
    try:
        response = _evaluate_in_child(req)
    except _Outcome as outcome:
        response = EvalResponse(id=req.id, status=outcome.status,
                                error_message=outcome.message or outcome.status)
    except BaseException:
        response = EvalResponse(id=req.id, status="runtime_error",
                                error_message=f"unexpected failure:\n{_excerpt()}")
    conn.send({
        "id": response.id,
        "status": response.status,
        "error_message": response.error_message,
        "runtime_ms": response.runtime_ms,
        "baseline_ms": response.baseline_ms,
    })
    conn.close()


def evaluate_pair(req: EvalRequest) -> EvalResponse:
    """Evaluate one request in a fresh child process with a hard timeout."""
    parent_conn, child_conn = _mp.Pipe(duplex=False)
    proc = _mp.Process(target=_child_main, args=(req, child_conn), daemon=True)
    proc.start()
    child_conn.close()
    try:
        if parent_conn.poll(req.timeout_s):
            payload = parent_conn.recv()
            proc.join(timeout=5)
            return EvalResponse(**payload)
        proc.terminate()
        proc.join(timeout=5)
        return EvalResponse(id=req.id, status="runtime_error",
                            error_message=f"timeout: evaluation exceeded {req.timeout_s}s")
    except EOFError:
        proc.join(timeout=5)
        code = proc.exitcode
        return EvalResponse(id=req.id, status="runtime_error",
                            error_message=f"evaluation process crashed (exit code {code})")
    finally:
        if proc.is_alive():
            proc.kill()
            proc.join(timeout=5)
        parent_conn.close()
