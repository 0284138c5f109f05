"""HTTP service for collecting two-dimension annotations from a panel.

Records are durable: every accepted label is appended to a JSONL log and
fsynced before the request is acknowledged, and the log is replayed on
startup. Sample assignment is deterministic: each annotator walks their own
seeded permutation of the sample ids, always preferring the samples with the
fewest collected labels so coverage stays even.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from PIL import Image
from pydantic import BaseModel

from .annotation import (
    AnnotationRecord,
    BehavioralLabel,
    EmotionalLabel,
    record_from_json,
    record_to_json,
)


class LabelSubmission(BaseModel):
    sample_id: str
    annotator: str
    behavioral: BehavioralLabel
    emotional: EmotionalLabel

LABEL_DEFINITIONS = {
    "behavioral": {
        "on_task": "The student is attending to the task: looking at the screen "
        "or work area and actively working.",
        "off_task": "The student's attention is away from the task: looking "
        "elsewhere, distracted, or not working.",
        "cant_decide": "The image does not show enough to judge the behavioral "
        "dimension.",
    },
    "emotional": {
        "satisfied": "The student appears comfortable with the task and shows "
        "no sign of confusion or boredom.",
        "confused": "The student appears to be having trouble understanding or "
        "completing the task.",
        "bored": "The student appears weary or uninterested in the task.",
        "cant_decide": "The image does not show enough to judge the emotional "
        "dimension.",
    },
    "combination": "On-task with satisfied or confused counts as engaged. "
    "Boredom or off-task behavior counts as disengaged. A can't-decide on "
    "either dimension makes the vote undecidable.",
}


class RecordLog:
    """Append-only JSONL store for annotation records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def replay(self) -> list[AnnotationRecord]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as stream:
            for line in stream:
                line = line.strip()
                if line:
                    records.append(record_from_json(json.loads(line)))
        return records

    def append(self, record: AnnotationRecord) -> None:
        with open(self.path, "a", encoding="utf-8") as stream:
            stream.write(json.dumps(record_to_json(record)) + "\n")
            stream.flush()
            os.fsync(stream.fileno())


class AssignmentError(Exception):
    """A label submission that the store cannot accept; carries an HTTP-ish code."""

    def __init__(self, status: int, detail: str):
        super().__init__(detail)
        self.status = status
        self.detail = detail


@dataclass
class StoreConfig:
    """``roster`` maps annotator id to the bearer token they must present;
    None disables authentication entirely."""

    images: Mapping[str, np.ndarray]
    log_path: str | Path
    annotators_per_sample: int = 6
    seed: int = 42
    roster: Mapping[str, str] | None = None
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)


class AnnotationStore:
    """Thread-safe assignment and collection engine behind the HTTP layer."""

    def __init__(self, config: StoreConfig):
        if not config.images:
            raise ValueError("no samples to annotate")
        if config.annotators_per_sample < 1:
            raise ValueError("annotators_per_sample must be >= 1")
        self.config = config
        self.sample_ids = tuple(sorted(config.images))
        self._lock = threading.Lock()
        self._records: list[AnnotationRecord] = []
        self._seen: set[tuple[str, str]] = set()
        self._counts: dict[str, int] = {sample_id: 0 for sample_id in self.sample_ids}
        self._in_flight: dict[str, str] = {}
        self._orders: dict[str, dict[str, int]] = {}
        self._png_cache: dict[str, bytes] = {}
        self.log = RecordLog(config.log_path)
        for record in self.log.replay():
            self._absorb(record)

    def _absorb(self, record: AnnotationRecord) -> None:
        key = (record.sample_id, record.annotator_id)
        if key in self._seen:
            return
        self._records.append(record)
        self._seen.add(key)
        if record.sample_id in self._counts:
            self._counts[record.sample_id] += 1

    def _check_annotator(self, annotator: str, token: str | None = None) -> None:
        if not annotator:
            raise AssignmentError(422, "annotator id must be non-empty")
        if self.config.roster is None:
            return
        expected = self.config.roster.get(annotator)
        if expected is None:
            raise AssignmentError(403, f"annotator {annotator!r} is not on the roster")
        if token != expected:
            raise AssignmentError(401, "missing or invalid bearer token")

    def _order_for(self, annotator: str) -> dict[str, int]:
        order = self._orders.get(annotator)
        if order is None:
            digest = hashlib.sha256(f"{self.config.seed}:{annotator}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            permutation = rng.permutation(len(self.sample_ids))
            order = {self.sample_ids[index]: rank for rank, index in enumerate(permutation)}
            self._orders[annotator] = order
        return order

    def next_sample(self, annotator: str, token: str | None = None) -> dict:
        """The annotator's next assignment, stable until they submit a label."""
        self._check_annotator(annotator, token)
        with self._lock:
            current = self._in_flight.get(annotator)
            if current is not None and (current, annotator) not in self._seen:
                return self._assignment_payload(annotator, current)
            order = self._order_for(annotator)
            candidates = [
                sample_id
                for sample_id in self.sample_ids
                if (sample_id, annotator) not in self._seen
                and self._counts[sample_id] < self.config.annotators_per_sample
            ]
            if not candidates:
                self._in_flight.pop(annotator, None)
                return {"done": True, "labeled": self._labeled_by(annotator)}
            chosen = min(candidates, key=lambda s: (self._counts[s], order[s]))
            self._in_flight[annotator] = chosen
            return self._assignment_payload(annotator, chosen)

    def _labeled_by(self, annotator: str) -> int:
        return sum(1 for sample_id, who in self._seen if who == annotator)

    def _assignment_payload(self, annotator: str, sample_id: str) -> dict:
        return {
            "done": False,
            "sample_id": sample_id,
            "image_url": f"/api/image/{sample_id}",
            "labeled": self._labeled_by(annotator),
            "total": len(self.sample_ids),
        }

    def submit(
        self,
        sample_id: str,
        annotator: str,
        behavioral: BehavioralLabel | str,
        emotional: EmotionalLabel | str,
        token: str | None = None,
    ) -> AnnotationRecord:
        self._check_annotator(annotator, token)
        try:
            behavioral = BehavioralLabel(behavioral)
            emotional = EmotionalLabel(emotional)
        except ValueError as exc:
            raise AssignmentError(422, str(exc)) from None
        with self._lock:
            if sample_id not in self._counts:
                raise AssignmentError(404, f"unknown sample {sample_id!r}")
            if (sample_id, annotator) in self._seen:
                raise AssignmentError(
                    409, f"annotator {annotator!r} already labeled sample {sample_id!r}"
                )
            if self._in_flight.get(annotator) != sample_id:
                raise AssignmentError(
                    409,
                    f"sample {sample_id!r} is not the current assignment for "
                    f"annotator {annotator!r}; fetch /api/next first",
                )
            record = AnnotationRecord(
                sample_id=sample_id,
                annotator_id=annotator,
                behavioral=behavioral,
                emotional=emotional,
                timestamp=self.config.clock(),
            )
            self.log.append(record)
            self._absorb(record)
            self._in_flight.pop(annotator, None)
            return record

    def png_for(self, sample_id: str) -> bytes:
        if sample_id not in self._counts:
            raise AssignmentError(404, f"unknown sample {sample_id!r}")
        cached = self._png_cache.get(sample_id)
        if cached is None:
            buffer = io.BytesIO()
            Image.fromarray(self.config.images[sample_id], mode="L").save(buffer, format="PNG")
            cached = buffer.getvalue()
            self._png_cache[sample_id] = cached
        return cached

    def export_records(self) -> list[AnnotationRecord]:
        with self._lock:
            return sorted(
                self._records, key=lambda r: (r.sample_id, r.timestamp, r.annotator_id)
            )

    def progress(self) -> dict:
        with self._lock:
            per_annotator: dict[str, int] = {}
            for _, annotator in self._seen:
                per_annotator[annotator] = per_annotator.get(annotator, 0) + 1
            required = self.config.annotators_per_sample
            complete = sum(1 for count in self._counts.values() if count >= required)
            return {
                "total_samples": len(self.sample_ids),
                "required_per_sample": required,
                "complete_samples": complete,
                "total_records": len(self._records),
                "per_annotator": dict(sorted(per_annotator.items())),
            }


def create_app(store: AnnotationStore, static_dir: str | Path | None = None):
    """FastAPI application wrapping an AnnotationStore."""
    from fastapi import FastAPI, Header, HTTPException, Query
    from fastapi.responses import PlainTextResponse, Response

    app = FastAPI(title="annotation service")
    app.state.store = store

    def bearer(authorization: str | None) -> str | None:
        if authorization and authorization.lower().startswith("bearer "):
            return authorization[7:]
        return None

    def guarded(call, *args):
        try:
            return call(*args)
        except AssignmentError as error:
            raise HTTPException(status_code=error.status, detail=error.detail)

    @app.get("/api/next")
    def api_next(
        annotator: str = Query(min_length=1),
        authorization: str | None = Header(default=None),
    ):
        return guarded(store.next_sample, annotator, bearer(authorization))

    @app.post("/api/label")
    def api_label(
        submission: LabelSubmission,
        authorization: str | None = Header(default=None),
    ):
        record = guarded(
            store.submit,
            submission.sample_id,
            submission.annotator,
            submission.behavioral,
            submission.emotional,
            bearer(authorization),
        )
        return {"status": "recorded", "record": record_to_json(record)}

    @app.get("/api/image/{sample_id}")
    def api_image(sample_id: str):
        payload = guarded(store.png_for, sample_id)
        return Response(content=payload, media_type="image/png")

    @app.get("/api/export")
    def api_export():
        lines = [json.dumps(record_to_json(r)) for r in store.export_records()]
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""))

    @app.get("/api/progress")
    def api_progress():
        return store.progress()

    @app.get("/api/definitions")
    def api_definitions():
        return LABEL_DEFINITIONS

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app


def serve(store: AnnotationStore, host: str = "127.0.0.1", port: int = 8000,
          static_dir: str | Path | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(store, static_dir=static_dir), host=host, port=port)
