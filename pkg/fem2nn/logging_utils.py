from __future__ import annotations

import json
import logging
import os
import re
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List

from rich.logging import RichHandler

from .config import DEFAULT_LOG_DIR

if TYPE_CHECKING:  # pragma: no cover
    from .runs import Run

LOG_DIR = DEFAULT_LOG_DIR
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
# Directory is created lazily when the first log is written to avoid empty run folders.


def slugify(label: str, default: str) -> str:
    """
    Convert a label into a filesystem-safe slug.
    """
    slug = re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")
    return slug or default


def configure_logging(log_dir: Path | None = None, *, verbose: bool = False) -> logging.Logger:
    """
    Attach the file handler (and optionally a rich console handler) to the
    package logger. Safe to call more than once.
    """
    logger = logging.getLogger("fem2nn")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    target = (log_dir or LOG_DIR) / "fem2nn.log"
    for handler in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
        if handler.baseFilename != os.path.abspath(target):
            logger.removeHandler(handler)
            handler.close()
    if not any(isinstance(h, logging.FileHandler) for h in logger.handlers):
        target.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(target, encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    if verbose and not any(isinstance(h, RichHandler) for h in logger.handlers):
        logger.addHandler(RichHandler(show_path=False))
    return logger


class RunLogger:
    """
    Write the transcript and structured event stream of one run to disk.
    The run store creates the folder; the logger only writes files.
    """

    def __init__(self, run: "Run") -> None:
        self.run = run
        self.run_dir = run.path
        self.log_path = self.run_dir / "run.log"
        self.jsonl_path = self.run_dir / "events.jsonl"
        self._initialized = False

    def _ensure_file(self) -> None:
        if self._initialized:
            return
        self.run_dir.mkdir(parents=True, exist_ok=True)
        if not self.log_path.exists():
            started = self.run.created_at.isoformat(timespec="seconds")
            header_lines = [
                f"run started: {started}",
                f"command: {self.run.command}",
                f"run: {self.run.label} ({self.run.id})",
                f"seed: {self.run.seed}",
                "",
            ]
            self.log_path.write_text("\n".join(header_lines) + "\n", encoding="utf-8")
        self.jsonl_path.touch(exist_ok=True)
        self._initialized = True

    def log_event(self, event: str, payload: Dict[str, Any] | None = None) -> None:
        self._ensure_file()
        now = datetime.now()
        record: Dict[str, Any] = {
            "event": event,
            "timestamp": now.isoformat(timespec="seconds"),
            "run_id": self.run.id,
            "payload": payload or {},
        }
        with self.jsonl_path.open("a", encoding="utf-8") as fp:
            fp.write(json.dumps(record, ensure_ascii=False) + "\n")
        summary = ", ".join(f"{k}={v}" for k, v in (payload or {}).items())
        with self.log_path.open("a", encoding="utf-8") as fp:
            fp.write(f"[{record['timestamp']}] {event}: {summary}\n")

    def read_events(self) -> List[Dict[str, Any]]:
        """
        Read the structured event stream for this run, skipping corrupt lines.
        """
        if not self.jsonl_path.exists():
            return []
        events: List[Dict[str, Any]] = []
        for line in self.jsonl_path.read_text(encoding="utf-8").splitlines():
            try:
                obj = json.loads(line)
            except Exception:
                continue
            if obj.get("event"):
                events.append(obj)
        return events
