"""Minimal stand-in worker for client tests: answers by candidate content.

Reads newline-delimited JSON requests on stdin and writes one response line
per request. The candidate source selects the canned outcome; "die" makes the
process exit without answering.
"""

import json
import sys


def main() -> None:
    for line in sys.stdin:
        if not line.strip():
            continue
        request = json.loads(line)
        candidate = request.get("candidate_source", "")
        if "die" in candidate:
            sys.exit(1)
        if "wrong-id" in candidate:
            response = {"id": "mismatch", "status": "correct", "error_message": "",
                        "runtime_ms": 1.0, "baseline_ms": 1.0}
        elif "fail" in candidate:
            response = {"id": request["id"], "status": "incorrect",
                        "error_message": "max absolute difference: 0.5",
                        "runtime_ms": None, "baseline_ms": None}
        else:
            response = {"id": request["id"], "status": "correct", "error_message": "",
                        "runtime_ms": 2.0, "baseline_ms": 5.0}
        sys.stdout.write(json.dumps(response) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
