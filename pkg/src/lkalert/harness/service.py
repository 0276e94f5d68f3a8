"""Annotation HTTP service: the backend of the manual-screening workflow.

Serves windows and their frames (media included) out of a dataset
directory and accepts review decisions, which are appended to an
append-only annotations log (annotations.jsonl next to dataset.jsonl).
Rebuilding the dataset never mutates the log; applying the log happens
at dataset-rebuild time. Restarting the service re-reads both files, so
restarts are idempotent.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from lkalert import dataset as ds

ANNOTATIONS_NAME = "annotations.jsonl"


class WindowSummary(BaseModel):
    id: str
    frame_count: int
    event_frame_index: int
    kind: str
    annotated_count: int


class FrameView(BaseModel):
    sample_id: str
    frame_time: float
    image_url: str
    binary_mask_url: str
    instance_mask_url: str
    can_text: str
    label: str
    explanation: str
    keep: bool


class WindowDetail(BaseModel):
    id: str
    event_frame_index: int
    kind: str
    frames: list[FrameView]


class AnnotationIn(BaseModel):
    sample_id: str
    keep: bool
    label: str = Field(pattern="^(Yes|No)$")
    explanation: str = ""
    annotator: str = ""
    nonce: str | None = None


class AnnotationOut(BaseModel):
    sample_id: str
    keep: bool
    label: str
    explanation: str
    annotator: str
    annotated_at: float
    duplicate: bool = False


class Progress(BaseModel):
    total: int
    annotated: int
    kept: int
    discarded: int


class _State:
    def __init__(self, dataset_root: Path):
        self.root = dataset_root
        self.dataset_path = dataset_root / "dataset.jsonl"
        self.annotations_path = dataset_root / ANNOTATIONS_NAME
        self.samples = {s.sample_id: s for s in ds.read_dataset(self.dataset_path)}
        self.order = list(self.samples)
        self.windows = self._load_windows()
        self.latest: dict[str, ds.AnnotationRecord] = {}
        for rec in ds.read_annotations(self.annotations_path):
            self._absorb(rec)
        self.fingerprint = self._fingerprint()
        self.lock = threading.Lock()
        self.nonces: dict[str, AnnotationOut] = {}

    def _fingerprint(self) -> tuple[int, int]:
        stat = self.dataset_path.stat()
        return stat.st_size, stat.st_mtime_ns

    def stale(self) -> bool:
        try:
            return self._fingerprint() != self.fingerprint
        except FileNotFoundError:
            return True

    def _absorb(self, rec: ds.AnnotationRecord) -> None:
        current = self.latest.get(rec.sample_id)
        if current is None or rec.annotated_at >= current.annotated_at:
            self.latest[rec.sample_id] = rec

    def _load_windows(self) -> list[dict]:
        meta_path = self.root / "windows.json"
        if meta_path.exists():
            return json.loads(meta_path.read_text(encoding="utf-8"))["windows"]
        groups: dict[str, list[str]] = {}
        for sid in self.order:
            groups.setdefault(ds.window_group(sid), []).append(sid)
        return [
            {
                "id": gid,
                "source_id": self.samples[members[0]].source_id,
                "event_frame_index": 1,
                "kind": "Unknown",
                "event_timestamp": self.samples[members[0]].frame_time,
                "sample_ids": members,
            }
            for gid, members in groups.items()
        ]

    def frame_view(self, sample_id: str) -> FrameView:
        sample = self.samples[sample_id]
        rec = self.latest.get(sample_id)
        return FrameView(
            sample_id=sample_id,
            frame_time=sample.frame_time,
            image_url=f"/media/{sample.image_ref}",
            binary_mask_url=f"/media/{sample.binary_mask_ref}",
            instance_mask_url=f"/media/{sample.instance_mask_ref}",
            can_text=sample.can_text,
            label=rec.label if rec else sample.label,
            explanation=rec.explanation if rec else sample.explanation,
            keep=rec.keep if rec else True,
        )


def create_app(dataset_root: Path | str, static_dir: Path | str | None = None) -> FastAPI:
    state = _State(Path(dataset_root))
    app = FastAPI(title="lkalert annotation service")
    app.state.annotations = state

    @app.get("/api/windows", response_model=list[WindowSummary])
    def list_windows() -> list[WindowSummary]:
        out = []
        for w in state.windows:
            annotated = sum(1 for sid in w["sample_ids"] if sid in state.latest)
            out.append(
                WindowSummary(
                    id=w["id"],
                    frame_count=len(w["sample_ids"]),
                    event_frame_index=w["event_frame_index"],
                    kind=w["kind"],
                    annotated_count=annotated,
                )
            )
        return out

    @app.get("/api/windows/{window_id}", response_model=WindowDetail)
    def window_detail(window_id: str) -> WindowDetail:
        for w in state.windows:
            if w["id"] == window_id:
                return WindowDetail(
                    id=w["id"],
                    event_frame_index=w["event_frame_index"],
                    kind=w["kind"],
                    frames=[state.frame_view(sid) for sid in w["sample_ids"]],
                )
        raise HTTPException(status_code=404, detail=f"unknown window {window_id!r}")

    @app.get("/api/progress", response_model=Progress)
    def progress() -> Progress:
        discarded = sum(1 for rec in state.latest.values() if not rec.keep)
        return Progress(
            total=len(state.samples),
            annotated=len(state.latest),
            kept=len(state.latest) - discarded,
            discarded=discarded,
        )

    @app.post("/api/annotations", response_model=AnnotationOut)
    def post_annotation(body: AnnotationIn) -> AnnotationOut:
        if body.sample_id not in state.samples:
            raise HTTPException(status_code=404, detail=f"unknown sample {body.sample_id!r}")
        if body.keep and body.label == "Yes" and not body.explanation.strip():
            raise HTTPException(status_code=400, detail="label Yes requires an explanation")
        if state.stale():
            raise HTTPException(status_code=409, detail="dataset was rebuilt; restart the service")
        with state.lock:
            if body.nonce is not None and body.nonce in state.nonces:
                stored = state.nonces[body.nonce]
                return stored.model_copy(update={"duplicate": True})
            record = ds.AnnotationRecord(
                sample_id=body.sample_id,
                keep=body.keep,
                label=body.label,
                explanation=body.explanation,
                annotator=body.annotator,
                annotated_at=time.time(),
            )
            ds.append_annotations([record], state.annotations_path)
            state._absorb(record)
            response = AnnotationOut(
                sample_id=record.sample_id,
                keep=record.keep,
                label=record.label,
                explanation=record.explanation,
                annotator=record.annotator,
                annotated_at=record.annotated_at,
            )
            if body.nonce is not None:
                state.nonces[body.nonce] = response
            return response

    @app.get("/media/{path:path}")
    def media(path: str) -> FileResponse:
        target = (state.root / path).resolve()
        root = state.root.resolve()
        if root not in target.parents or not target.is_file():
            raise HTTPException(status_code=404, detail="no such media file")
        return FileResponse(target)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:

        @app.get("/")
        def index() -> dict:
            return {
                "service": "lkalert annotation service",
                "windows": "/api/windows",
                "progress": "/api/progress",
            }

    return app
