import json

import pytest

from kernelrl.errors import RunNotFoundError, StoreConflictError
from kernelrl.scoring import EvalResult, EvalStatus
from kernelrl.store import RunStore, TurnRow


def row(step=0, task="task-a", traj=0, turn=1, kernel="opt: tile", run_id="r1"):
    return TurnRow(
        run_id=run_id, step=step, task_id=task, trajectory_index=traj, turn_index=turn,
        kernel_source=kernel, cot_summary="did things",
        eval=EvalResult(EvalStatus.correct, baseline_ms=2.0, runtime_ms=1.0),
        score=2.3, aggregated_reward=2.5, advantage=0.1,
        response_tokens=42, truncated=False,
    )


@pytest.fixture
def store(tmp_path):
    s = RunStore(tmp_path / "runs")
    s.create_run("r1", {"m": 2}, seed=7)
    return s


class TestRunLifecycle:
    def test_create_and_read(self, store):
        record = store.read_run("r1")
        assert record.run_id == "r1"
        assert record.config == {"m": 2}
        assert record.seed == 7

    def test_duplicate_run_conflicts(self, store):
        with pytest.raises(StoreConflictError):
            store.create_run("r1", {}, seed=0)

    def test_unknown_run(self, store):
        with pytest.raises(RunNotFoundError):
            store.read_run("missing")
        with pytest.raises(RunNotFoundError):
            list(store.scan("missing"))


class TestAppendScan:
    def test_round_trip_identity(self, store):
        original = row(kernel="line one\nline two\n  indented é")
        with store.writer("r1") as writer:
            writer.append_turn(original)
        (read,) = list(store.scan("r1"))
        assert read == original

    def test_duplicate_key_conflicts(self, store):
        with store.writer("r1") as writer:
            writer.append_turn(row())
            with pytest.raises(StoreConflictError):
                writer.append_turn(row())

    def test_duplicate_detected_across_writer_sessions(self, store):
        with store.writer("r1") as writer:
            writer.append_turn(row())
        with store.writer("r1") as writer:
            with pytest.raises(StoreConflictError):
                writer.append_turn(row())

    def test_many_appends_then_scan(self, store):
        with store.writer("r1") as writer:
            for i in range(10000):
                writer.append_turn(row(step=i // 100, task=f"task-{i % 10}",
                                       traj=(i // 10) % 10, turn=i % 10 + 1))
        rows = list(store.scan("r1"))
        assert len(rows) == 10000

    def test_scan_order(self, store):
        with store.writer("r1") as writer:
            writer.append_turn(row(step=1, task="b", traj=0, turn=1))
            writer.append_turn(row(step=0, task="a", traj=1, turn=2))
            writer.append_turn(row(step=0, task="a", traj=1, turn=1))
            writer.append_turn(row(step=0, task="a", traj=0, turn=1))
        keys = [(r.step, r.task_id, r.trajectory_index, r.turn_index)
                for r in store.scan("r1")]
        assert keys == sorted(keys)

    def test_filters(self, store):
        with store.writer("r1") as writer:
            for step in range(3):
                for task in ("a", "b"):
                    writer.append_turn(row(step=step, task=task))
        assert all(r.step == 1 for r in store.scan("r1", step=1))
        assert len(list(store.scan("r1", step=1))) == 2
        assert len(list(store.scan("r1", task_id="a"))) == 3
        assert list(store.scan("r1", step=2, task_id="b"))[0].task_id == "b"

    def test_scan_equals_append_multiset(self, store):
        rows = [row(step=s, task=t, traj=i, turn=n)
                for s in range(2) for t in ("a", "b") for i in range(2) for n in (1, 2)]
        with store.writer("r1") as writer:
            for r in rows:
                writer.append_turn(r)
        assert sorted(store.scan("r1"), key=lambda r: r.key) == sorted(rows, key=lambda r: r.key)

    def test_torn_trailing_line_is_ignored(self, store):
        with store.writer("r1") as writer:
            writer.append_turn(row())
        path = store.run_dir("r1") / "turns.jsonl"
        with path.open("a", encoding="utf-8") as fh:
            fh.write('{"run_id": "r1", "step": 1, "task_id": "zz"')  # no newline
        rows = list(store.scan("r1"))
        assert len(rows) == 1

    def test_empty_run_scans_empty(self, store):
        assert list(store.scan("r1")) == []


class TestStatsAndCots:
    def test_stats_round_trip(self, store):
        with store.writer("r1") as writer:
            writer.append_stats(0, {"mean_reward": 1.5, "correct_rate": 0.5})
        stats = store.read_stats("r1")
        assert stats == [{"step": 0, "mean_reward": 1.5, "correct_rate": 0.5}]

    def test_cot_sidecar(self, store):
        with store.writer("r1") as writer:
            writer.append_cot(3, "task-a", 0, 1, "Okay, long reasoning...")
        sidecar = store.run_dir("r1") / "cots" / "step_3.jsonl"
        assert sidecar.exists()
        obj = json.loads(sidecar.read_text())
        assert obj["cot_full"].startswith("Okay,")


class TestTrajectoriesView:
    def test_grouping(self, store):
        with store.writer("r1") as writer:
            for traj in range(2):
                for turn in (1, 2, 3):
                    writer.append_turn(row(step=0, task="a", traj=traj, turn=turn))
        grouped = store.trajectories("r1", step=0)
        assert list(grouped) == ["a"]
        assert len(grouped["a"]) == 2
        assert [r.turn_index for r in grouped["a"][0]] == [1, 2, 3]
