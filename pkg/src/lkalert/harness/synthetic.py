"""Synthetic road-scene dataset generator.

Stands in for real drive data at desk scale. Each scene renders two lane
lines as quadratic curves plus the masks a lane detector would produce
for them. Three failure factors drive the ground-truth label:

    Yes  iff  lane_fade > 0.6  OR  occlusion > 0.5  OR  |lane_curvature| > 0.01

The signal is deliberately encoded in the mask/label structure: fade and
occlusion remove mask pixels (the detector misses what it cannot see)
and curvature bends the mask geometry, while the camera image is buried
under rain noise. A model that reads the masks therefore holds a real
information advantage over one that reads only the noisy image, which is
what the guided/unguided ablation needs to be able to show.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from lkalert import canlog, dataset
from lkalert.errors import LKAlertError

FADE_ALERT = 0.6
OCCLUSION_ALERT = 0.5
CURVATURE_ALERT = 0.01

# Pixel shift of the lane at the horizon per unit curvature, at 64 px.
CURVE_PX_PER_UNIT = 500.0
# Fraction of lane pixels a detector loses at full fade / full occlusion.
DETECTOR_LOSS = 0.8


class SyntheticError(LKAlertError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    image_size: int
    lane_curvature: float  # 1/m; positive bends right
    lane_fade: float       # [0, 1]
    occlusion: float       # [0, 1]
    rain_noise: float      # [0, 1]
    seed: int

    def __post_init__(self) -> None:
        for name in ("lane_fade", "occlusion", "rain_noise"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SyntheticError(f"{name} must be in [0, 1], got {value}")


def label_for_spec(spec: SceneSpec) -> tuple[str, str]:
    """Ground-truth label and templated explanation for a scene."""
    if spec.lane_fade > FADE_ALERT:
        return "Yes", "the laneline ahead is badly faded"
    if spec.occlusion > OCCLUSION_ALERT:
        return "Yes", "the laneline ahead is occluded"
    if abs(spec.lane_curvature) > CURVATURE_ALERT:
        side = "right" if spec.lane_curvature > 0 else "left"
        return "Yes", f"there is a sharp curve to the {side} ahead"
    return "No", ""


def sample_scene_specs(
    count: int,
    seed: int,
    image_size: int = 64,
    rain_lo: float = 0.7,
    rain_hi: float = 1.0,
) -> list[SceneSpec]:
    """Draw scene factors: half the scenes get exactly one strong factor.

    Normal scenes keep every factor well below its alert threshold and
    strong scenes push exactly one factor well above it, so labels are
    cleanly recoverable from the rendered masks.
    """
    if count < 1:
        raise SyntheticError("count must be >= 1")
    rng = np.random.default_rng(seed)
    specs: list[SceneSpec] = []
    for _ in range(count):
        fade = rng.uniform(0.0, 0.20)
        occ = rng.uniform(0.0, 0.02)
        curv = rng.uniform(-0.003, 0.003)
        if rng.random() < 0.5:
            factor = int(rng.integers(3))
            if factor == 0:
                fade = rng.uniform(0.75, 1.0)
            elif factor == 1:
                occ = rng.uniform(0.65, 0.95)
            else:
                sign = 1.0 if rng.random() < 0.5 else -1.0
                curv = sign * rng.uniform(0.015, 0.030)
        specs.append(
            SceneSpec(
                image_size=image_size,
                lane_curvature=float(curv),
                lane_fade=float(fade),
                occlusion=float(occ),
                rain_noise=float(rng.uniform(rain_lo, rain_hi)),
                seed=int(rng.integers(2**31)),
            )
        )
    return specs


def _geometry(size: int) -> tuple[int, int, float, float, int]:
    horizon = size // 8
    bottom = size - 1
    center = size / 2.0
    half_width = 0.18 * size
    thickness = max(1, size // 32)
    return horizon, bottom, center, half_width, thickness


def _lane_pixels(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ys, xs, lane_ids) for the ideal un-degraded lane pixels."""
    size = spec.image_size
    horizon, bottom, center, half_width, thickness = _geometry(size)
    a_px = spec.lane_curvature * CURVE_PX_PER_UNIT * (size / 64.0)
    ys, xs, ids = [], [], []
    for y in range(horizon, bottom + 1):
        t = (bottom - y) / (bottom - horizon)
        shift = a_px * t * t
        for lane_id, base in ((1, center - half_width), (2, center + half_width)):
            x0 = int(round(base + shift))
            for dx in range(thickness):
                x = x0 + dx
                if 0 <= x < size:
                    ys.append(y)
                    xs.append(x)
                    ids.append(lane_id)
    return np.array(ys), np.array(xs), np.array(ids)


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render (rgb image, binary mask, instance mask) for a scene.

    Masks model the detector view: fade drops pixels stochastically,
    occlusion removes a contiguous block of rows. The image keeps faded
    lanes visible but dim, covers the occluded block with a gray object,
    and is then degraded by rain noise.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    horizon, bottom, _, _, _ = _geometry(size)
    ys, xs, ids = _lane_pixels(spec)

    # Occlusion: a block of rows along the lane.
    n_rows = bottom - horizon + 1
    occ_len = int(round(DETECTOR_LOSS * spec.occlusion * n_rows))
    occ_start = horizon + int(rng.integers(0, max(1, n_rows - occ_len + 1)))
    occluded = (ys >= occ_start) & (ys < occ_start + occ_len)

    # Fade: detector loses pixels at a rate proportional to fade.
    dropped = rng.random(len(ys)) < DETECTOR_LOSS * spec.lane_fade

    keep = ~occluded & ~dropped
    binary = np.zeros((size, size), dtype=np.uint8)
    instance = np.zeros((size, size), dtype=np.uint8)
    binary[ys[keep], xs[keep]] = 255
    instance[ys[keep], xs[keep]] = ids[keep]

    # Image: road texture, visible-but-dim lanes, occluder object, rain.
    gray = rng.normal(58.0, 3.0, size=(size, size))
    visible = ~occluded
    lane_level = 58.0 + 165.0 * (1.0 - spec.lane_fade)
    gray[ys[visible], xs[visible]] = lane_level
    if occ_len > 0:
        x_lo = max(0, int(xs.min()) - 2)
        x_hi = min(size, int(xs.max()) + 3)
        gray[occ_start : occ_start + occ_len, x_lo:x_hi] = 70.0
    rain = spec.rain_noise
    gray = gray * (1.0 - 0.75 * rain) + rng.normal(0.0, 70.0 * rain, size=gray.shape)
    speckle = rng.random(gray.shape) < 0.30 * rain
    gray[speckle] = rng.uniform(0.0, 255.0, size=int(speckle.sum()))
    gray = np.clip(gray, 0.0, 255.0)
    image = np.repeat(gray[:, :, None], 3, axis=2)
    image += rng.normal(0.0, 2.0, size=image.shape)
    return np.clip(image, 0, 255).astype(np.uint8), binary, instance


# ---------------------------------------------------------------------------
# Evidence scores: the 1-D statistics a decision stump thresholds to verify
# that labels are recoverable from masks but not from rained-out images.


def _expected_lane_pixels(size: int) -> int:
    horizon, bottom, _, _, thickness = _geometry(size)
    return (bottom - horizon + 1) * thickness * 2


def _curvature_estimate(ys: np.ndarray, xs: np.ndarray, size: int) -> float:
    horizon, bottom, _, _, _ = _geometry(size)
    if len(ys) < 8 or len(np.unique(ys)) < 4:
        return 0.0
    t = (bottom - ys) / (bottom - horizon)
    coeffs = np.polyfit(t, xs, 2)
    return abs(float(coeffs[0])) / (CURVE_PX_PER_UNIT * (size / 64.0))


def mask_evidence_score(binary: np.ndarray, instance: np.ndarray) -> float:
    """Failure evidence from the masks alone; alert-worthy scenes score > 1."""
    size = binary.shape[0]
    count = int((binary > 0).sum())
    deficit = max(0.0, 1.0 - count / _expected_lane_pixels(size))
    curv_scores = []
    for lane_id in (1, 2):
        ys, xs = np.nonzero(instance == lane_id)
        curv_scores.append(_curvature_estimate(ys, xs, size))
    curvature = max(curv_scores) if curv_scores else 0.0
    return max(deficit / 0.5, curvature / CURVATURE_ALERT)


def image_evidence_score(image: np.ndarray) -> float:
    """The same evidence computed from raw image brightness."""
    size = image.shape[0]
    gray = image.astype(np.float64).mean(axis=2)
    horizon, _, _, _, _ = _geometry(size)
    bright = gray > 150.0
    bright[:horizon, :] = False
    ys, xs = np.nonzero(bright)
    deficit = max(0.0, 1.0 - len(ys) / _expected_lane_pixels(size))
    curvature = _curvature_estimate(ys, xs, size)
    return max(deficit / 0.5, curvature / CURVATURE_ALERT)


# ---------------------------------------------------------------------------
# Dataset emission


def generate_dataset(
    out_dir: Path | str,
    count: int,
    seed: int,
    image_size: int = 64,
    rain_lo: float = 0.7,
    rain_hi: float = 1.0,
    val_fraction: float = 0.2,
) -> list[dataset.AlertSample]:
    """Write a complete training-ready dataset tree.

    Layout under out_dir: images/, masks_bin/, masks_ins/ (one PNG per
    scene), telemetry.csv, dataset.jsonl, windows.json, scene_specs.jsonl.
    Byte-identical across runs for the same arguments.
    """
    out = Path(out_dir)
    for sub in ("images", "masks_bin", "masks_ins"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    specs = sample_scene_specs(count, seed, image_size, rain_lo, rain_hi)
    source_id = f"synth-{seed}"

    # Coarsely quantized so CAN text draws from a small shared token set;
    # the telemetry is deliberately uninformative about the scene label.
    rng = np.random.default_rng(seed + 7)
    records = []
    for i in range(count):
        records.append(
            canlog.TelemetryRecord(
                timestamp=i * 0.5,
                speed=float(rng.integers(20, 36)),
                steering_angle=float(rng.integers(-5, 6)),
                steering_torque=round(float(rng.integers(-3, 4)) / 10.0, 1),
                lka_engaged=True,
                lane_center_offset=round(float(rng.integers(-2, 3)) / 10.0, 1),
            )
        )
    series = canlog.TelemetrySeries(records=tuple(records), source_id=source_id)
    (out / "telemetry.csv").write_text(canlog.serialize_log(series), encoding="utf-8")

    samples: list[dataset.AlertSample] = []
    for i, spec in enumerate(specs):
        image, binary, instance = render_scene(spec)
        stem = f"scene_{i:04d}.png"
        Image.fromarray(image, mode="RGB").save(out / "images" / stem)
        Image.fromarray(binary, mode="L").save(out / "masks_bin" / stem)
        Image.fromarray(instance, mode="L").save(out / "masks_ins" / stem)
        label, explanation = label_for_spec(spec)
        t = i * 0.5
        samples.append(
            dataset.AlertSample(
                sample_id=f"{source_id}:w{i:04d}:f00",
                source_id=source_id,
                frame_time=t,
                image_ref=f"images/{stem}",
                binary_mask_ref=f"masks_bin/{stem}",
                instance_mask_ref=f"masks_ins/{stem}",
                can_text=canlog.snapshot_text(canlog.sample_at(series, t)),
                label=label,
                explanation=explanation,
            )
        )

    train, val = dataset.split(samples, val_fraction=val_fraction, seed=seed + 1)
    by_id = {s.sample_id: s for s in train + val}
    final = [by_id[s.sample_id] for s in samples]
    dataset.write_dataset(final, out / "dataset.jsonl")

    windows = [
        {
            "id": dataset.window_group(s.sample_id),
            "source_id": s.source_id,
            "event_frame_index": 1,
            "kind": "Synthetic",
            "event_timestamp": s.frame_time,
            "sample_ids": [s.sample_id],
        }
        for s in final
    ]
    (out / "windows.json").write_text(
        json.dumps({"windows": windows}, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    with open(out / "scene_specs.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for spec in specs:
            fh.write(json.dumps(asdict(spec), sort_keys=True) + "\n")
    return final
