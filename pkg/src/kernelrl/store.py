"""Append-only persistence for runs: trajectories, samples, step statistics.

One directory per run: config.json (immutable snapshot), turns.jsonl (one
TurnRow object per line), stats.jsonl (one row per step), and optional
cots/step_<n>.jsonl sidecars holding full chains of thought. Lines are written
whole and flushed, so readers never see a torn record; a trailing partial line
(crash mid-write) is ignored on scan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

from .errors import RunNotFoundError, StoreConflictError
from .scoring import EvalResult, EvalStatus


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    config: dict
    created_at: str
    seed: int


@dataclass(frozen=True)
class TurnRow:
    run_id: str
    step: int
    task_id: str
    trajectory_index: int
    turn_index: int
    kernel_source: str
    cot_summary: str
    eval: EvalResult
    score: float
    aggregated_reward: float
    advantage: float
    response_tokens: int
    truncated: bool

    @property
    def key(self) -> tuple[str, int, str, int, int]:
        return (self.run_id, self.step, self.task_id,
                self.trajectory_index, self.turn_index)


def _row_to_obj(row: TurnRow) -> dict:
    return {
        "run_id": row.run_id,
        "step": row.step,
        "task_id": row.task_id,
        "trajectory_index": row.trajectory_index,
        "turn_index": row.turn_index,
        "kernel_source": row.kernel_source,
        "cot_summary": row.cot_summary,
        "eval": {
            "status": row.eval.status.value,
            "runtime_ms": row.eval.runtime_ms,
            "baseline_ms": row.eval.baseline_ms,
            "error_message": row.eval.error_message,
        },
        "score": row.score,
        "aggregated_reward": row.aggregated_reward,
        "advantage": row.advantage,
        "response_tokens": row.response_tokens,
        "truncated": row.truncated,
    }


def _row_from_obj(obj: dict) -> TurnRow:
    ev = obj["eval"]
    return TurnRow(
        run_id=obj["run_id"],
        step=obj["step"],
        task_id=obj["task_id"],
        trajectory_index=obj["trajectory_index"],
        turn_index=obj["turn_index"],
        kernel_source=obj["kernel_source"],
        cot_summary=obj["cot_summary"],
        eval=EvalResult(
            status=EvalStatus(ev["status"]),
            baseline_ms=ev["baseline_ms"],
            runtime_ms=ev["runtime_ms"],
            error_message=ev["error_message"],
        ),
        score=obj["score"],
        aggregated_reward=obj["aggregated_reward"],
        advantage=obj["advantage"],
        response_tokens=obj["response_tokens"],
        truncated=obj["truncated"],
    )


class RunStore:
    """Filesystem-backed store. Single writer per run, any number of readers."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def create_run(self, run_id: str, config: dict, seed: int) -> RunRecord:
        run_dir = self.run_dir(run_id)
        if run_dir.exists():
            raise StoreConflictError(f"run {run_id!r} already exists")
        run_dir.mkdir(parents=True)
        record = RunRecord(
            run_id=run_id,
            config=config,
            created_at=datetime.now(timezone.utc).isoformat(),
            seed=seed,
        )
        payload = {"run_id": record.run_id, "created_at": record.created_at,
                   "seed": record.seed, "config": record.config}
        (run_dir / "config.json").write_text(json.dumps(payload, indent=2), "utf-8")
        return record

    def read_run(self, run_id: str) -> RunRecord:
        path = self.run_dir(run_id) / "config.json"
        if not path.exists():
            raise RunNotFoundError(run_id)
        obj = json.loads(path.read_text("utf-8"))
        return RunRecord(run_id=obj["run_id"], config=obj["config"],
                         created_at=obj["created_at"], seed=obj["seed"])

    def writer(self, run_id: str) -> "TurnWriter":
        if not self.run_dir(run_id).exists():
            raise RunNotFoundError(run_id)
        return TurnWriter(self.run_dir(run_id))

    def _read_jsonl(self, path: Path) -> Iterator[dict]:
        if not path.exists():
            return
        with path.open("rb") as fh:
            data = fh.read()
        for line in data.split(b"\n")[:-1]:  # a torn trailing line has no newline
            if line.strip():
                yield json.loads(line.decode("utf-8"))

    def scan(self, run_id: str, step: int | None = None,
             task_id: str | None = None) -> Iterator[TurnRow]:
        """Rows in (step, task_id, trajectory_index, turn_index) order."""
        run_dir = self.run_dir(run_id)
        if not run_dir.exists():
            raise RunNotFoundError(run_id)
        rows = [_row_from_obj(obj) for obj in self._read_jsonl(run_dir / "turns.jsonl")]
        if step is not None:
            rows = [r for r in rows if r.step == step]
        if task_id is not None:
            rows = [r for r in rows if r.task_id == task_id]
        rows.sort(key=lambda r: (r.step, r.task_id, r.trajectory_index, r.turn_index))
        return iter(rows)

    def read_stats(self, run_id: str) -> list[dict]:
        run_dir = self.run_dir(run_id)
        if not run_dir.exists():
            raise RunNotFoundError(run_id)
        return list(self._read_jsonl(run_dir / "stats.jsonl"))

    def steps(self, run_id: str) -> list[int]:
        return sorted({r.step for r in self.scan(run_id)})

    def trajectories(self, run_id: str, step: int) -> dict[str, list[list[TurnRow]]]:
        """Per task: trajectories ordered by index, each a turn-ordered row list."""
        grouped: dict[str, dict[int, list[TurnRow]]] = {}
        for row in self.scan(run_id, step=step):
            grouped.setdefault(row.task_id, {}).setdefault(row.trajectory_index, []).append(row)
        out: dict[str, list[list[TurnRow]]] = {}
        for task_id, by_traj in grouped.items():
            out[task_id] = [by_traj[i] for i in sorted(by_traj)]
        return out


class TurnWriter:
    """Serializes appends for one run; loads existing keys to reject duplicates.

    Each record is written as one write() of a full line and flushed, so a
    concurrent reader sees either the whole line or nothing.
    """

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.turns_path = run_dir / "turns.jsonl"
        self.stats_path = run_dir / "stats.jsonl"
        self._keys: set[tuple] = set()
        if self.turns_path.exists():
            with self.turns_path.open("rb") as fh:
                for line in fh.read().split(b"\n")[:-1]:
                    if line.strip():
                        row = _row_from_obj(json.loads(line.decode("utf-8")))
                        self._keys.add(row.key)
        self._turns_fh = self.turns_path.open("a", encoding="utf-8")

    def append_turn(self, row: TurnRow) -> None:
        if row.key in self._keys:
            raise StoreConflictError(f"duplicate turn key {row.key}")
        line = json.dumps(_row_to_obj(row), ensure_ascii=True)
        self._turns_fh.write(line + "\n")
        self._turns_fh.flush()
        self._keys.add(row.key)

    def append_stats(self, step: int, stats: dict) -> None:
        obj = {"step": step, **stats}
        with self.stats_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, ensure_ascii=True) + "\n")
            fh.flush()

    def append_cot(self, step: int, task_id: str, trajectory_index: int,
                   turn_index: int, cot_full: str) -> None:
        """Full chains of thought go to a per-step sidecar, not the main log."""
        cot_dir = self.run_dir / "cots"
        cot_dir.mkdir(exist_ok=True)
        obj = {"task_id": task_id, "trajectory_index": trajectory_index,
               "turn_index": turn_index, "cot_full": cot_full}
        with (cot_dir / f"step_{step}.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, ensure_ascii=True) + "\n")
            fh.flush()

    def close(self) -> None:
        self._turns_fh.close()

    def __enter__(self) -> "TurnWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
