"""Alert dataset assembly, annotation application, splitting, and term counts.

The on-disk format is JSON Lines, one sample per line, with file
references relative to the dataset root. Sample ids encode the window a
frame belongs to ("<source>:w0007:f03") so that windows can be kept
atomic at split time and the annotation service can group frames for
review without a separate schema field.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from lkalert import canlog
from lkalert.errors import LKAlertError
from lkalert.text import STOP_WORDS, tokenize
from lkalert.windowing import EventKind, EventWindow


class DatasetError(LKAlertError):
    pass


class MissingFrame(DatasetError):
    def __init__(self, source_id: str, t: float):
        super().__init__(f"no frame for source {source_id!r} at t={t}")
        self.source_id, self.t = source_id, t


class MissingMask(DatasetError):
    def __init__(self, ref: str):
        super().__init__(f"mask file missing or unreadable: {ref}")
        self.ref = ref


class TelemetryOutOfRange(DatasetError):
    pass


class UnknownSampleId(DatasetError):
    pass


class InvalidAnnotation(DatasetError):
    pass


class DegenerateSplit(DatasetError):
    pass


@dataclass(frozen=True)
class AlertSample:
    sample_id: str
    source_id: str
    frame_time: float
    image_ref: str
    binary_mask_ref: str
    instance_mask_ref: str
    can_text: str
    label: str          # "Yes" | "No"
    explanation: str    # non-empty iff label == "Yes" in a finished dataset
    split: str = "train"

    def __post_init__(self) -> None:
        if self.label not in ("Yes", "No"):
            raise DatasetError(f"label must be Yes or No, got {self.label!r}")
        if self.split not in ("train", "val"):
            raise DatasetError(f"split must be train or val, got {self.split!r}")


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    keep: bool
    label: str
    explanation: str
    annotator: str
    annotated_at: float  # epoch seconds


@dataclass(frozen=True)
class FrameRefs:
    image_ref: str
    binary_mask_ref: str | None
    instance_mask_ref: str | None


@dataclass(frozen=True)
class MaskPair:
    """Binary lane-edge mask (0/255) and lane-instance mask (0..K)."""

    binary: np.ndarray
    instance: np.ndarray

    def __post_init__(self) -> None:
        if self.binary.shape != self.instance.shape:
            raise DatasetError("binary and instance masks must share width/height")
        values = np.unique(self.binary)
        if not np.all(np.isin(values, (0, 255))):
            raise DatasetError("binary mask values must be 0 or 255")
        if self.instance.min() < 0:
            raise DatasetError("instance ids must be non-negative")


def frame_key(source_id: str, t: float) -> tuple[str, int]:
    """Index key for frame lookup; times are matched at millisecond grain."""
    return source_id, round(t * 1000)


def window_group(sample_id: str) -> str:
    """The window a sample belongs to, per the ':fNN' suffix convention."""
    head, sep, tail = sample_id.rpartition(":f")
    return head if sep and tail.isdigit() else sample_id


def assemble(
    windows: Sequence[EventWindow],
    frame_index: Mapping[tuple[str, int], FrameRefs],
    series_index: Mapping[str, canlog.TelemetrySeries],
    root: Path | str | None = None,
) -> list[AlertSample]:
    """Build one AlertSample per window frame.

    Failure-kind windows default to label Yes (explanation left empty for
    the annotation pass); Normal windows to No. When `root` is given,
    every referenced file must exist under it.
    """
    base = Path(root) if root is not None else None
    samples: list[AlertSample] = []
    for w_idx, window in enumerate(windows):
        label = "No" if window.event.kind == EventKind.NORMAL else "Yes"
        series = series_index[window.source_id]
        for f_idx, t in enumerate(window.frame_times):
            refs = frame_index.get(frame_key(window.source_id, t))
            if refs is None:
                raise MissingFrame(window.source_id, t)
            if refs.binary_mask_ref is None:
                raise MissingMask(f"{window.source_id} t={t} (binary)")
            if refs.instance_mask_ref is None:
                raise MissingMask(f"{window.source_id} t={t} (instance)")
            if base is not None:
                if not (base / refs.image_ref).is_file():
                    raise MissingFrame(window.source_id, t)
                for ref in (refs.binary_mask_ref, refs.instance_mask_ref):
                    if not (base / ref).is_file():
                        raise MissingMask(ref)
            try:
                record = canlog.sample_at(series, t)
            except canlog.OutOfRange as exc:
                raise TelemetryOutOfRange(str(exc)) from exc
            samples.append(
                AlertSample(
                    sample_id=f"{window.source_id}:w{w_idx:04d}:f{f_idx:02d}",
                    source_id=window.source_id,
                    frame_time=t,
                    image_ref=refs.image_ref,
                    binary_mask_ref=refs.binary_mask_ref,
                    instance_mask_ref=refs.instance_mask_ref,
                    can_text=canlog.snapshot_text(record),
                    label=label,
                    explanation="",
                )
            )
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate sample ids in assembled dataset")
    return samples


def apply_annotations(
    samples: Sequence[AlertSample], annotations: Sequence[AnnotationRecord]
) -> list[AlertSample]:
    """Apply review decisions: drop keep=false samples, overwrite label/explanation.

    The latest annotation per sample wins (by annotated_at; input order
    breaks ties). The result must leave no Yes sample without an
    explanation, which is what successful manual screening guarantees.
    """
    known = {s.sample_id for s in samples}
    latest: dict[str, AnnotationRecord] = {}
    for ann in annotations:
        if ann.sample_id not in known:
            raise UnknownSampleId(ann.sample_id)
        current = latest.get(ann.sample_id)
        if current is None or ann.annotated_at >= current.annotated_at:
            latest[ann.sample_id] = ann

    out: list[AlertSample] = []
    for sample in samples:
        ann = latest.get(sample.sample_id)
        if ann is not None:
            if not ann.keep:
                continue
            sample = replace(sample, label=ann.label, explanation=ann.explanation)
        if sample.label == "Yes" and not sample.explanation.strip():
            raise InvalidAnnotation(
                f"sample {sample.sample_id} is labeled Yes without an explanation"
            )
        out.append(sample)
    return out


def split(
    samples: Sequence[AlertSample], val_fraction: float, seed: int
) -> tuple[list[AlertSample], list[AlertSample]]:
    """Deterministic stratified train/val split with windows kept atomic.

    All frames of a window land on the same side to prevent near-duplicate
    leakage. Per label class the validation size tracks val_fraction as
    closely as window granularity allows (exact to +-1 sample for
    single-frame windows).
    """
    if not 0 < val_fraction < 1:
        raise DatasetError("val_fraction must be in (0, 1)")
    groups: dict[str, list[AlertSample]] = {}
    for s in samples:
        groups.setdefault(window_group(s.sample_id), []).append(s)

    by_label: dict[str, list[str]] = {"Yes": [], "No": []}
    for gid, members in groups.items():
        yes = sum(1 for m in members if m.label == "Yes")
        label = "Yes" if yes * 2 >= len(members) else "No"
        by_label[label].append(gid)

    rng = np.random.default_rng(seed)
    val_groups: set[str] = set()
    for label in ("Yes", "No"):
        gids = sorted(by_label[label])
        if not gids:
            continue
        class_total = sum(len(groups[g]) for g in gids)
        target = val_fraction * class_total
        order = rng.permutation(len(gids))
        current = 0
        for idx in order:
            size = len(groups[gids[idx]])
            if abs(current + size - target) <= abs(current - target):
                val_groups.add(gids[idx])
                current += size
        if current == 0 or current == class_total:
            raise DegenerateSplit(
                f"label {label!r} would be empty on one side of the split"
            )

    train: list[AlertSample] = []
    val: list[AlertSample] = []
    for s in samples:
        if window_group(s.sample_id) in val_groups:
            val.append(replace(s, split="val"))
        else:
            train.append(replace(s, split="train"))
    return train, val


def term_frequencies(samples: Iterable[AlertSample]) -> dict[str, int]:
    """Token counts over Yes-sample explanations, stop words removed."""
    counts: Counter[str] = Counter()
    for s in samples:
        if s.label == "Yes":
            counts.update(t for t in tokenize(s.explanation) if t not in STOP_WORDS)
    return dict(counts)


# ---------------------------------------------------------------------------
# JSON Lines persistence


def write_dataset(samples: Iterable[AlertSample], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(asdict(s), sort_keys=True) + "\n")


def read_dataset(path: Path | str) -> list[AlertSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                samples.append(AlertSample(**json.loads(line)))
    return samples


def append_annotations(records: Iterable[AnnotationRecord], path: Path | str) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        fh.flush()


def read_annotations(path: Path | str) -> list[AnnotationRecord]:
    if not Path(path).exists():
        return []
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(AnnotationRecord(**json.loads(line)))
    return records
