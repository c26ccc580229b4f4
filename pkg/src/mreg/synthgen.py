"""Synthetic apical-four-chamber colour-Doppler-like videos.

Each video shows a grayscale pulsating four-chamber background. MR videos
additionally carry a red/blue "regurgitation jet" inside the left-atrium
region whose area, duration and eccentricity encode the severity grade.
Exactly one MIL clip carries the jet at full intensity; the others show it
at 25% intensity.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRADES = (0, 1, 2)
SPLITS = ("train", "val", "test")

CARDIAC_PERIOD = 12
ATTENUATION = 0.25

# (area_fraction, duration_fraction, eccentricity) sampling ranges per MR grade
GRADE_RANGES = {
    1: {"area": (0.01, 0.04), "duration": (0.20, 0.40), "ecc": (0.0, 0.3)},
    2: {"area": (0.08, 0.20), "duration": (0.45, 0.75), "ecc": (0.0, 0.9)},
}

JET_RED = np.array([230, 30, 20], dtype=np.float64)
JET_BLUE = np.array([20, 60, 235], dtype=np.float64)


@dataclass
class JetParams:
    area_fraction: float = 0.0
    duration_fraction: float = 0.0
    eccentricity: float = 0.0
    jet_clip_index: int = 0

    def __post_init__(self):
        for name in ("area_fraction", "duration_fraction", "eccentricity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class VideoSample:
    id: str
    frames: np.ndarray  # [T_total, H, W, 3] uint8
    grade: int
    roi: tuple[int, int, int, int]  # x, y, w, h
    jet: JetParams | None = None
    split: str = "train"
    binary_label: int = field(init=False)

    def __post_init__(self):
        if self.grade not in GRADES:
            raise ValueError(f"grade must be one of {GRADES}, got {self.grade}")
        self.binary_label = int(self.grade > 0)


def _check_grade(grade):
    if grade not in GRADES:
        raise ValueError(f"grade must be one of {GRADES}, got {grade!r}")


def grade_params(grade: int, rng: np.random.Generator, n_clips: int = 3) -> JetParams:
    """Draw jet parameters for ``grade``; grade 0 has no jet."""
    _check_grade(grade)
    clip = int(rng.integers(n_clips))
    if grade == 0:
        return JetParams(0.0, 0.0, 0.0, clip)
    r = GRADE_RANGES[grade]
    return JetParams(
        area_fraction=float(rng.uniform(*r["area"])),
        duration_fraction=float(rng.uniform(*r["duration"])),
        eccentricity=float(rng.uniform(*r["ecc"])),
        jet_clip_index=clip,
    )


def atrium_box(h: int, w: int) -> tuple[int, int, int, int]:
    """Left-atrium region (x, y, w, h): lower-right quadrant of the chambers."""
    x0, y0 = int(round(0.52 * w)), int(round(0.55 * h))
    x1, y1 = int(round(0.88 * w)), int(round(0.90 * h))
    return x0, y0, x1 - x0, y1 - y0


def jet_mask(jet: JetParams, h: int, w: int) -> np.ndarray:
    """Boolean [h, w] mask of the jet ellipse, clipped to the atrium region."""
    mask = np.zeros((h, w), dtype=bool)
    if jet.area_fraction <= 0:
        return mask
    ax, ay, aw, ah = atrium_box(h, w)
    target = jet.area_fraction * aw * ah
    r = np.sqrt(target / np.pi)
    # eccentric jets hug the lateral wall: elongated vertically, narrower
    ry = min(r * (1.0 + 0.8 * jet.eccentricity), ah / 2.0)
    rx = target / (np.pi * ry)
    rx = min(rx, aw / 2.0)
    cy = ay + ry
    slack = aw / 2.0 - rx
    cx = ax + aw / 2.0 + jet.eccentricity * slack
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx + 0.5 - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2 <= 1.0
    box = np.zeros_like(mask)
    box[ay:ay + ah, ax:ax + aw] = True
    return inside & box


def _background(t: int, h: int, w: int, period: int, speckle: np.ndarray) -> np.ndarray:
    phase = 2 * np.pi * (t % period) / period
    pulse = 1.0 + 0.08 * np.sin(phase)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), 110.0)
    # four chambers: LV, RV on top, LA, RA at the bottom
    centres = [(0.30, 0.70), (0.30, 0.30), (0.72, 0.70), (0.72, 0.30)]
    radii = [(0.20, 0.14), (0.18, 0.12), (0.15, 0.15), (0.14, 0.13)]
    for (cy, cx), (ry, rx) in zip(centres, radii):
        d = ((yy - cy * h) / (ry * h * pulse)) ** 2 + ((xx - cx * w) / (rx * w * pulse)) ** 2
        img = np.where(d <= 1.0, 35.0, img)
    img = img + speckle[t % speckle.shape[0]]
    return np.clip(img, 0, 255)


def render_video(jet: JetParams, grade: int, dims: tuple[int, int, int],
                 rng: np.random.Generator, clip_len: int = 16,
                 period: int = CARDIAC_PERIOD, sample_id: str = "video") -> VideoSample:
    """Render one video of ``dims = (T_total, H, W)`` frames."""
    _check_grade(grade)
    t_total, h, w = dims
    if t_total < 48 or h < 64 or w < 64:
        raise ValueError(f"dims must satisfy T_total >= 48 and H, W >= 64, got {dims}")
    if grade == 0 and jet.area_fraction != 0:
        raise ValueError("grade-0 videos cannot carry a jet")

    speckle = rng.normal(0.0, 12.0, size=(period, h, w))
    mosaic = rng.random((h, w)) < 0.5
    colour = np.where(mosaic[..., None], JET_RED, JET_BLUE)
    mask = jet_mask(jet, h, w)
    on_frames = int(round(jet.duration_fraction * period))

    frames = np.empty((t_total, h, w, 3), dtype=np.uint8)
    for t in range(t_total):
        gray = _background(t, h, w, period, speckle)
        img = np.repeat(gray[..., None], 3, axis=2)
        if grade > 0 and (t % period) < on_frames:
            strength = 1.0 if t // clip_len == jet.jet_clip_index else ATTENUATION
            blend = (1 - strength) * img + strength * colour
            img = np.where(mask[..., None], blend, img)
        frames[t] = np.round(img).astype(np.uint8)

    # ROI covers all chambers; small jitter keeps cropping non-trivial
    mx, my = rng.integers(1, 5, size=2)
    roi = (int(mx), int(my), int(w - mx - rng.integers(1, 5)), int(h - my - rng.integers(1, 5)))
    return VideoSample(id=sample_id, frames=frames, grade=grade, roi=roi,
                       jet=jet, split="train")


def write_ppm(path, frame: np.ndarray) -> None:
    h, w, _ = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def _video_seed(seed: int, split: str, grade: int, k: int) -> list[int]:
    return [seed, SPLITS.index(split), grade, k]


def gen_dataset(config: dict, out_dir, dims=(48, 64, 64), seed: int = 0,
                n_clips: int = 3, clip_len: int = 16) -> list[dict]:
    """Write a stratified synthetic dataset and its ``manifest.jsonl``.

    ``config`` maps split name to per-grade counts, e.g.
    ``{"train": [2, 2, 2], "val": [1, 1, 1], "test": [1, 1, 1]}``.
    Returns the manifest records.
    """
    for split, counts in config.items():
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        if len(counts) != 3 or any(int(c) < 0 for c in counts):
            raise ValueError(f"split {split!r}: need three non-negative counts, got {counts}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")

    records = []
    for split in SPLITS:
        counts = config.get(split, [0, 0, 0])
        for grade, count in enumerate(counts):
            for k in range(int(count)):
                rng = np.random.default_rng(_video_seed(seed, split, grade, k))
                vid = f"{split}_g{grade}_{k:04d}"
                jet = grade_params(grade, rng, n_clips=n_clips)
                sample = render_video(jet, grade, dims, rng, clip_len=clip_len, sample_id=vid)
                vdir = out_dir / vid
                vdir.mkdir(exist_ok=True)
                for t, frame in enumerate(sample.frames):
                    write_ppm(vdir / f"{t:04d}.ppm", frame)
                records.append({
                    "id": vid, "dir": vid, "grade": grade, "roi": list(sample.roi),
                    "split": split, "jet_clip_index": jet.jet_clip_index,
                    "n_frames": int(dims[0]),
                })
    write_manifest(records, out_dir / "manifest.jsonl")
    return records


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
