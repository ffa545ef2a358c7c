"""Append-only JSON-lines store of run records, used as a result cache."""

from __future__ import annotations

import hashlib
import json
import threading
import warnings
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from ._version import __version__

RECORD_FILE = "records.jsonl"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(kind: str, config: dict) -> str:
    """Digest of the operation name and its canonical configuration."""
    return hashlib.sha256(canonical_json({"kind": kind, "config": config}).encode()).hexdigest()


@dataclass(frozen=True)
class RunRecord:
    spec_id: str | None
    spec_hash: str
    config_hash: str
    kind: str
    config: dict
    result: dict
    timestamp: str
    version: str = __version__

    def to_line(self) -> str:
        return canonical_json(asdict(self))

    @classmethod
    def from_line(cls, line: str) -> "RunRecord":
        data = json.loads(line)
        return cls(**data)

    @classmethod
    def create(cls, spec_id, spec_hash: str, kind: str, config: dict, result: dict) -> "RunRecord":
        stamp = datetime.now(timezone.utc).isoformat(timespec="microseconds")
        return cls(spec_id, spec_hash, config_hash(kind, config), kind, config, result, stamp)


class RecordStore:
    """Records kept one per line in ``<run_dir>/records.jsonl``.

    Appends go through a lock, so concurrent workers share one writer.
    """

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / RECORD_FILE
        self._lock = threading.Lock()

    def append(self, record: RunRecord) -> None:
        line = record.to_line()
        with self._lock:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def records(self) -> list[RunRecord]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    out.append(RunRecord.from_line(line))
                except (json.JSONDecodeError, TypeError) as exc:
                    warnings.warn(f"{self.path}:{n}: skipping corrupt record ({exc})", stacklevel=2)
        return out

    def lookup(self, spec_hash: str, cfg_hash: str) -> RunRecord | None:
        return cache_lookup(self, spec_hash, cfg_hash)


def cache_lookup(store: RecordStore, spec_hash: str, cfg_hash: str) -> RunRecord | None:
    """Newest record whose spec and config hashes both match, or ``None``."""
    hits = [r for r in store.records() if r.spec_hash == spec_hash and r.config_hash == cfg_hash]
    return hits[-1] if hits else None
