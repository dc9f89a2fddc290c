from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path

import pytest

import sys
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem2nn.logging_utils import RunLogger, slugify  # noqa: E402
from fem2nn.runs import RUN_FORMAT_VERSION, RunNotFoundError, RunStore  # noqa: E402


def test_create_records_seed_and_outputs(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    run = store.create(
        "audit", command="fem2nn audit", seed=7, outputs=["audit.csv"], created_at=datetime(2024, 1, 2, 0, 0, 0)
    )
    assert run.id == "audit-20240102-000000"
    assert run.status == "running"
    meta = json.loads(run.metadata_path.read_text())
    assert meta["id"] == run.id
    assert meta["seed"] == 7
    assert meta["outputs"] == ["audit.csv"]
    assert meta["finished_at"] is None
    assert meta["version"] == RUN_FORMAT_VERSION


def test_finish_persists_status(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    run = store.create("verify", created_at=datetime(2024, 1, 1, 0, 0, 0))
    store.finish(run, "failed", finished_at=datetime(2024, 1, 1, 0, 0, 5))
    loaded = store.resolve(run.id)
    assert loaded.status == "failed"
    assert loaded.finished_at == datetime(2024, 1, 1, 0, 0, 5)
    with pytest.raises(ValueError):
        store.finish(run, "running")


def test_resolve_by_id_or_newest_label(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    older = store.create("study lshape", created_at=datetime(2024, 1, 1, 0, 0, 0))
    newer = store.create("study lshape", created_at=datetime(2024, 1, 3, 0, 0, 0))
    other = store.create("audit", created_at=datetime(2024, 1, 2, 0, 0, 0))
    assert store.resolve(older.id).id == older.id
    assert store.resolve("study lshape").id == newer.id
    assert store.resolve("audit").id == other.id
    assert [r.id for r in store.list_runs("study lshape")] == [newer.id, older.id]
    with pytest.raises(RunNotFoundError):
        store.resolve("emulate")


def test_same_second_runs_get_suffixes(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    stamp = datetime(2024, 3, 4, 5, 6, 7)
    ids = [store.create("study lshape", created_at=stamp).id for _ in range(3)]
    assert ids == [
        "study_lshape-20240304-050607",
        "study_lshape-20240304-050607-2",
        "study_lshape-20240304-050607-3",
    ]


def test_run_logger_structured_events(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    run = store.create("verify", command="fem2nn verify", seed=3, created_at=datetime(2024, 1, 1, 12, 0, 0))

    logger = RunLogger(run)
    logger.log_event("start", {"argv": "fem2nn verify"})
    logger.log_event("verify", {"max_error": 1e-12, "passed": True})
    with logger.jsonl_path.open("a", encoding="utf-8") as fp:
        fp.write("not json\n")

    events = logger.read_events()
    assert [e["event"] for e in events] == ["start", "verify"]
    assert events[1]["payload"]["passed"] is True
    # every line carries the run id so streams can be merged safely
    assert all(e["run_id"] == run.id for e in events)
    transcript = logger.log_path.read_text(encoding="utf-8")
    assert transcript.startswith("run started: 2024-01-01T12:00:00")
    assert "seed: 3" in transcript
    assert "verify: max_error=1e-12, passed=True" in transcript


def test_list_skips_unreadable_directories(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    first = store.create("emulate", created_at=datetime(2024, 1, 1, 0, 0, 0))
    second = store.create("audit", created_at=datetime(2024, 1, 2, 0, 0, 0))
    (tmp_path / "stray").mkdir()
    (tmp_path / "notes.txt").write_text("ignore", encoding="utf-8")

    assert [r.id for r in store.list_runs()] == [second.id, first.id]
    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "run.json").write_text("{", encoding="utf-8")
    assert len(store.list_runs()) == 2
    loaded = store.resolve(first.id)
    assert loaded.label == "emulate"
    assert loaded.created_at == first.created_at
    with pytest.raises(RunNotFoundError):
        store.resolve("stray")


def test_run_store_delete(tmp_path: Path) -> None:
    store = RunStore(base_dir=tmp_path)
    run = store.create("demo", created_at=datetime(2024, 1, 1, 12, 0, 0))
    # removal is recursive
    (run.path / "dummy.log").write_text("hello", encoding="utf-8")

    assert run.path.exists()
    assert store.delete(run.id).id == run.id
    assert not run.path.exists()

    with pytest.raises(RunNotFoundError):
        store.delete("non-existent")


def test_slugify() -> None:
    assert slugify("study lshape/p=6", "run") == "study_lshape_p_6"
    assert slugify("///", "run") == "run"
