"""JSON run manifest so interrupted batches resume where they stopped."""

from __future__ import annotations

import json
import os
from pathlib import Path

PENDING, DONE, FAILED = "pending", "done", "failed"


class RunManifest:
    """Per-task status keyed by task name, tied to a configuration hash.

    A manifest whose hash differs from the current run is discarded, so stale
    results are never reused. Only the orchestrating process writes it.
    """

    def __init__(self, path, config_hash: str, tasks: dict | None = None):
        self.path = Path(path)
        self.config_hash = config_hash
        self.tasks = dict(tasks or {})

    @classmethod
    def open(cls, path, config_hash: str) -> "RunManifest":
        path = Path(path)
        if path.exists():
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError:
                doc = None
            if doc and doc.get("config_hash") == config_hash:
                return cls(path, config_hash, doc.get("tasks", {}))
        return cls(path, config_hash)

    def status(self, key: str) -> str:
        return self.tasks.get(key, {}).get("status", PENDING)

    def is_done(self, key: str) -> bool:
        """Done and every recorded artifact still on disk."""
        t = self.tasks.get(key)
        if not t or t.get("status") != DONE:
            return False
        return all((self.path.parent / a).exists() for a in t.get("artifacts", []))

    def mark(self, key: str, status: str, artifacts=(), error: str | None = None, **extra) -> None:
        rec = {"status": status, "artifacts": sorted(str(a) for a in artifacts)}
        if error:
            rec["error"] = error
        rec.update(extra)
        self.tasks[key] = rec
        self.save()

    def failed(self) -> list[str]:
        return sorted(k for k, t in self.tasks.items() if t.get("status") == FAILED)

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"config_hash": self.config_hash, "tasks": dict(sorted(self.tasks.items()))}
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        os.replace(tmp, self.path)
