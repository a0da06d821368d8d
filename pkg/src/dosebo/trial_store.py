"""Durable storage for live trials with deterministic replay.

Each trial owns a directory holding its immutable ``config.json`` and
an append-only ``events.jsonl``.  Outcome submissions are the only
state-changing events; iteration records are derived and logged for
audit but ignored on replay.  Reloading a trial replays its outcome
events through a fresh engine, which reproduces the exact trajectory
because the engine derives every random stream from the trial seed and
iteration indices, never from call timing.

Mutations to one trial are serialized by a per-trial lock.  Reads are
lock-free: they see the latest immutable snapshot, swapped in wholesale
after each completed mutation.
"""

from __future__ import annotations

import copy
import json
import os
import re
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from dosebo.design import DesignConfig, TrialEngine, parse_pattern

SCHEMA_VERSION = "1"

_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


class TrialNotFoundError(KeyError):
    """No trial with the requested id."""


class DuplicateTrialError(ValueError):
    """A trial with the requested id already exists."""


@dataclass
class TrialRecord:
    trial_id: str
    live: TrialEngine
    snapshot: TrialEngine
    directory: Path
    processed: dict[str, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _items_to_tuples(items) -> list[tuple[tuple[float, ...], tuple[int, ...], float]]:
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ValueError(f"items[{i}] must be an object")
        missing = {"dose", "y"} - set(item)
        if missing:
            raise ValueError(f"items[{i}] missing fields: {sorted(missing)}")
        dose = tuple(float(v) for v in item["dose"])
        stratum = item.get("stratum")
        if stratum is None:
            z: tuple[int, ...] = ()
        elif isinstance(stratum, str):
            z = parse_pattern(stratum)
        else:
            z = tuple(int(v) for v in stratum)
        out.append((dose, z, float(item["y"])))
    return out


class TrialStore:
    """Directory-per-trial persistence with in-memory engines."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, TrialRecord] = {}
        self._registry_lock = threading.Lock()

    def create(self, config: DesignConfig, trial_id: str | None = None) -> TrialRecord:
        tid = trial_id or uuid.uuid4().hex[:12]
        if not _ID_RE.match(tid):
            raise ValueError(
                f"trial_id must match [A-Za-z0-9_-]{{1,64}}, got {tid!r}")
        with self._registry_lock:
            directory = self.root / tid
            if tid in self._records or directory.exists():
                raise DuplicateTrialError(f"trial {tid!r} already exists")
            directory.mkdir(parents=True)
            (directory / "config.json").write_text(json.dumps({
                "schema_version": SCHEMA_VERSION,
                "trial_id": tid,
                "config": config.to_dict(),
            }, indent=2, sort_keys=True) + "\n")
            (directory / "events.jsonl").touch()
            engine = TrialEngine(config)
            record = TrialRecord(
                trial_id=tid, live=engine, snapshot=copy.deepcopy(engine),
                directory=directory)
            self._records[tid] = record
            return record

    def get(self, trial_id: str) -> TrialRecord:
        record = self._records.get(trial_id)
        if record is not None:
            return record
        with self._registry_lock:
            record = self._records.get(trial_id)
            if record is not None:
                return record
            record = self._load(trial_id)
            self._records[trial_id] = record
            return record

    def trial_ids(self) -> list[str]:
        on_disk = {p.name for p in self.root.iterdir()
                   if p.is_dir() and (p / "config.json").exists()}
        return sorted(on_disk | set(self._records))

    def _load(self, trial_id: str) -> TrialRecord:
        directory = self.root / trial_id
        config_path = directory / "config.json"
        if not config_path.exists():
            raise TrialNotFoundError(trial_id)
        meta = json.loads(config_path.read_text())
        config = DesignConfig.from_dict(meta["config"])
        engine = TrialEngine(config)
        processed: dict[str, dict] = {}
        events_path = directory / "events.jsonl"
        if events_path.exists():
            with open(events_path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    event = json.loads(line)
                    if event.get("type") != "outcomes":
                        continue  # iteration records are derived; replay skips them
                    engine.submit_outcomes(_items_to_tuples(event["items"]))
                    processed[event["cohort_id"]] = {"replayed": True}
        return TrialRecord(
            trial_id=trial_id, live=engine, snapshot=copy.deepcopy(engine),
            directory=directory, processed=processed)

    def submit(self, trial_id: str, cohort_id: str, items) -> dict:
        """Apply one outcome batch, durably and idempotently.

        ``cohort_id`` is the client's idempotency key for this batch;
        resubmitting a processed key is a no-op that returns the current
        trial state flagged as a duplicate.
        """
        if not cohort_id or not isinstance(cohort_id, str) or len(cohort_id) > 128:
            raise ValueError("cohort_id must be a nonempty string of at most 128 characters")
        record = self.get(trial_id)
        with record.lock:
            if cohort_id in record.processed:
                response = dict(record.processed[cohort_id])
                response["duplicate"] = True
                response["status"] = record.snapshot.status
                return response
            tuples = _items_to_tuples(items)
            result = record.live.submit_outcomes(tuples)
            # persist after the engine accepted the batch; the engine
            # validates fully before mutating, so a raise leaves no trace
            with open(record.directory / "events.jsonl", "a") as fh:
                fh.write(json.dumps({
                    "type": "outcomes", "cohort_id": cohort_id,
                    "items": [
                        {"dose": list(d), "stratum": list(z), "y": y}
                        for d, z, y in tuples
                    ],
                }, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
                if result["cohort_complete"]:
                    for rec in result["records"]:
                        fh.write(json.dumps(
                            {"type": "iteration", **rec.to_dict()}, sort_keys=True) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            record.snapshot = copy.deepcopy(record.live)
            response = {
                "duplicate": False,
                "accepted": len(tuples),
                "cohort_complete": result["cohort_complete"],
                "status": record.live.status,
                "records": [rec.to_dict() for rec in result["records"]],
            }
            record.processed[cohort_id] = response
            return dict(response)

    def replay_check(self, trial_id: str) -> dict:
        """Replay a trial from disk and compare against the live state.

        Returns a report with ``match`` True when the replayed engine
        reproduces the live summary and iteration history exactly.
        """
        record = self.get(trial_id)
        replayed = self._load(trial_id)
        live_hist = [r.to_dict() for r in record.snapshot.history]
        replay_hist = [r.to_dict() for r in replayed.live.history]
        return {
            "match": (record.snapshot.summary() == replayed.live.summary()
                      and live_hist == replay_hist),
            "live_summary": record.snapshot.summary(),
            "replayed_summary": replayed.live.summary(),
        }
