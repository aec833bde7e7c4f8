"""Serving loops: newline-delimited JSON over stdio, or the same over TCP.

One response line per request line, order preserved. Protocol failures become
parse_error responses (with the id echoed when it could be recovered); nothing
ever raises across the wire.
"""

from __future__ import annotations

import socket
import sys
from typing import IO

from .protocol import EvalResponse, ProtocolError, canon_response, parse_request
from .runner import evaluate_pair


def handle_line(line: str) -> EvalResponse | None:
    if not line.strip():
        return None
    try:
        request = parse_request(line)
    except ProtocolError as exc:
        return EvalResponse(id=exc.request_id, status="parse_error",
                            error_message=str(exc))
    try:
        return evaluate_pair(request)
    except Exception as exc:  # the worker never raises across the wire
        return EvalResponse(id=request.id, status="runtime_error",
                            error_message=f"internal worker error: {exc}")


def serve(stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> None:
    """Serve until end-of-input."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        response = handle_line(line)
        if response is None:
            continue
        stdout.write(canon_response(response) + "\n")
        stdout.flush()


def serve_tcp(port: int, host: str = "127.0.0.1") -> None:
    """Accept one connection at a time; identical payloads to the stdio mode."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        print(f"eval-worker listening on {host}:{server.getsockname()[1]}",
              file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn:
                fin = conn.makefile("r", encoding="utf-8", newline="\n")
                fout = conn.makefile("w", encoding="utf-8", newline="\n")
                serve(fin, fout)
