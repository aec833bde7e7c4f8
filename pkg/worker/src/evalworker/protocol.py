"""Wire protocol: newline-delimited JSON, fixed key order, one line per message.

Requests carry the reference and candidate sources plus evaluation knobs;
responses mirror the request id and report a status, an error message, and the
two wall-clock timings (present only when the candidate is correct).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

REQUEST_KEYS = ("id", "op", "reference_source", "candidate_source", "entry_class",
                "reference_class", "trials", "timing_iters", "timeout_s", "seed",
                "rtol", "atol", "device")
RESPONSE_KEYS = ("id", "status", "error_message", "runtime_ms", "baseline_ms")

STATUSES = ("parse_error", "compile_error", "runtime_error", "incorrect", "correct")


class ProtocolError(Exception):
    """Malformed request. Carries the request id when it could be recovered."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


@dataclass(frozen=True)
class EvalRequest:
    id: str
    reference_source: str
    candidate_source: str
    entry_class: str = "ModelNew"
    reference_class: str = "Model"
    trials: int = 5
    timing_iters: int = 20
    timeout_s: float = 60.0
    seed: int = 0
    rtol: float = 1e-4
    atol: float = 1e-4
    device: str = "cpu"


@dataclass(frozen=True)
class EvalResponse:
    id: str | None
    status: str
    error_message: str = ""
    runtime_ms: float | None = None
    baseline_ms: float | None = None

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "correct" and (self.runtime_ms is None or self.baseline_ms is None):
            raise ValueError("correct responses must carry both timings")


def parse_request(line: str) -> EvalRequest:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"request is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("request must be a JSON object")
    request_id = obj.get("id")
    if not isinstance(request_id, str) or not request_id:
        raise ProtocolError("request id must be a nonempty string",
                            request_id=None)
    unknown = set(obj) - set(REQUEST_KEYS)
    if unknown:
        raise ProtocolError(f"unknown request fields: {sorted(unknown)}", request_id)
    if obj.get("op") != "evaluate":
        raise ProtocolError(f"unsupported op {obj.get('op')!r}", request_id)
    for key in ("reference_source", "candidate_source"):
        if not isinstance(obj.get(key), str) or not obj[key]:
            raise ProtocolError(f"{key} must be a nonempty string", request_id)

    def number(key, default, minimum):
        value = obj.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < minimum:
            raise ProtocolError(f"{key} must be a number >= {minimum}", request_id)
        return value

    device = obj.get("device", "cpu")
    if device != "cpu":
        raise ProtocolError(f"device {device!r} is not available on this worker",
                            request_id)
    return EvalRequest(
        id=request_id,
        reference_source=obj["reference_source"],
        candidate_source=obj["candidate_source"],
        entry_class=str(obj.get("entry_class", "ModelNew")),
        reference_class=str(obj.get("reference_class", "Model")),
        trials=int(number("trials", 5, 1)),
        timing_iters=int(number("timing_iters", 20, 1)),
        timeout_s=float(number("timeout_s", 60.0, 0.001)),
        seed=int(number("seed", 0, -2**63)),
        rtol=float(number("rtol", 1e-4, 0.0)),
        atol=float(number("atol", 1e-4, 0.0)),
        device=device,
    )


def canon_request(req: EvalRequest) -> str:
    """Canonical single-line serialization; key order fixed for golden tests."""
    obj = {
        "id": req.id,
        "op": "evaluate",
        "reference_source": req.reference_source,
        "candidate_source": req.candidate_source,
        "entry_class": req.entry_class,
        "reference_class": req.reference_class,
        "trials": req.trials,
        "timing_iters": req.timing_iters,
        "timeout_s": req.timeout_s,
        "seed": req.seed,
        "rtol": req.rtol,
        "atol": req.atol,
        "device": req.device,
    }
    return json.dumps(obj, ensure_ascii=True)


def canon_response(resp: EvalResponse) -> str:
    obj = {
        "id": resp.id,
        "status": resp.status,
        "error_message": resp.error_message,
        "runtime_ms": resp.runtime_ms,
        "baseline_ms": resp.baseline_ms,
    }
    return json.dumps(obj, ensure_ascii=True)


def parse_response(line: str) -> EvalResponse:
    obj = json.loads(line)
    unknown = set(obj) - set(RESPONSE_KEYS)
    if unknown:
        raise ProtocolError(f"unknown response fields: {sorted(unknown)}")
    return EvalResponse(
        id=obj.get("id"),
        status=obj["status"],
        error_message=obj.get("error_message", ""),
        runtime_ms=obj.get("runtime_ms"),
        baseline_ms=obj.get("baseline_ms"),
    )
