from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from .errors import Fem2nnError
from .fileio import atomic_write_text
from .logging_utils import LOG_DIR, RunLogger, slugify

RUN_FORMAT_VERSION = 2
RUN_STATUSES = ("running", "ok", "failed")


class RunNotFoundError(Fem2nnError):
    pass


@dataclass
class Run:
    """
    One recorded CLI invocation (emulate, verify, audit or study): its seed, the files
    it wrote and how it ended.
    """

    id: str
    label: str
    command: str
    created_at: datetime
    path: Path
    seed: int = 0
    status: str = "running"
    outputs: List[str] = field(default_factory=list)
    finished_at: Optional[datetime] = None

    @property
    def metadata_path(self) -> Path:
        return self.path / "run.json"

    def logger(self) -> RunLogger:
        return RunLogger(self)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "command": self.command,
            "created_at": self.created_at.isoformat(),
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
            "seed": self.seed,
            "status": self.status,
            "outputs": self.outputs,
            "version": RUN_FORMAT_VERSION,
        }

    @classmethod
    def from_json(cls, data: dict, path: Path) -> "Run":
        finished = data.get("finished_at")
        return cls(
            id=data["id"],
            label=data.get("label") or data["id"],
            command=data.get("command", ""),
            created_at=datetime.fromisoformat(data["created_at"]),
            path=path,
            seed=int(data.get("seed", 0)),
            status=data.get("status", "running"),
            outputs=[str(p) for p in data.get("outputs", [])],
            finished_at=datetime.fromisoformat(finished) if finished else None,
        )


class RunStore:
    """
    Run directories under the log directory, one `run.json` each. Runs are addressed by
    id, or by label for the most recent run carrying it.
    """

    def __init__(self, base_dir: Path | None = None) -> None:
        self.base_dir = base_dir or LOG_DIR
        self.base_dir.mkdir(parents=True, exist_ok=True)

    def create(
        self,
        label: str,
        *,
        command: str = "",
        seed: int = 0,
        outputs: Optional[List[str]] = None,
        created_at: Optional[datetime] = None,
    ) -> Run:
        created = created_at or datetime.now()
        stem = f"{slugify(label, 'run')}-{created.strftime('%Y%m%d-%H%M%S')}"
        run_id, suffix = stem, 1
        while (self.base_dir / run_id).exists():
            suffix += 1
            run_id = f"{stem}-{suffix}"
        path = self.base_dir / run_id
        path.mkdir(parents=True)
        run = Run(
            id=run_id,
            label=slugify(label, "run"),
            command=command,
            created_at=created,
            path=path,
            seed=seed,
            outputs=[str(p) for p in outputs or []],
        )
        self._save(run)
        return run

    def finish(self, run: Run, status: str, finished_at: Optional[datetime] = None) -> Run:
        if status not in RUN_STATUSES[1:]:
            raise ValueError(f"unknown final status {status!r}")
        run.status = status
        run.finished_at = finished_at or datetime.now()
        self._save(run)
        return run

    def list_runs(self, label: Optional[str] = None) -> List[Run]:
        """Newest first; directories without readable metadata are skipped."""
        wanted = slugify(label, "run") if label else None
        runs: List[Run] = []
        for meta_path in self.base_dir.glob("*/run.json"):
            try:
                run = Run.from_json(json.loads(meta_path.read_text(encoding="utf-8")), meta_path.parent)
            except (OSError, ValueError, KeyError, TypeError):
                continue
            if wanted is None or run.label == wanted:
                runs.append(run)
        runs.sort(key=lambda r: (r.created_at, r.id), reverse=True)
        return runs

    def resolve(self, ref: str) -> Run:
        """The run with id `ref`, else the newest run labelled `ref`."""
        meta_path = self.base_dir / ref / "run.json"
        if meta_path.is_file():
            return Run.from_json(json.loads(meta_path.read_text(encoding="utf-8")), meta_path.parent)
        labelled = self.list_runs(ref)
        if not labelled:
            raise RunNotFoundError(f"no run with id or label {ref!r}")
        return labelled[0]

    def delete(self, ref: str) -> Run:
        run = self.resolve(ref)
        shutil.rmtree(run.path)
        return run

    def _save(self, run: Run) -> None:
        atomic_write_text(run.metadata_path, json.dumps(run.to_json(), indent=2))
