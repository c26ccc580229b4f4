"""ROI cropping, MIL bag construction, stratified splitting and manifest loading."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synthgen import SPLITS, read_manifest, read_ppm


@dataclass
class InstanceBag:
    clips: np.ndarray  # [I, T, 3, H', W'] uint8
    frame_ranges: list[tuple[int, int]]
    source_id: str = ""

    @property
    def n_instances(self) -> int:
        return self.clips.shape[0]


def bilinear_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize ``[..., H, W]`` with half-pixel-centre bilinear interpolation.

    Returns float64; edge samples are clamped.
    """
    h, w = img.shape[-2:]
    oh, ow = out_hw

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    img = img.astype(np.float64)
    top = img[..., y0, :] * (1 - fy)[:, None] + img[..., y1, :] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def crop_and_resize(frames: np.ndarray, roi, out_hw=(224, 224)) -> np.ndarray:
    """Crop ``[T, H, W, 3]`` frames to ``roi = (x, y, w, h)`` and resize.

    Returns uint8 frames laid out as ``[T, 3, H', W']``.
    """
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"expected frames of shape [T, H, W, 3], got {frames.shape}")
    x, y, w, h = (int(v) for v in roi)
    H, W = frames.shape[1:3]
    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > W or y + h > H:
        raise ValueError(f"roi {tuple(roi)} lies outside the {W}x{H} frame")
    crop = frames[:, y:y + h, x:x + w, :].transpose(0, 3, 1, 2)
    if (h, w) == tuple(out_hw):
        return np.ascontiguousarray(crop)
    out = bilinear_resize(crop, out_hw)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def make_bag(frames: np.ndarray, n_instances: int = 3, clip_len: int = 16,
             source_id: str = "") -> InstanceBag:
    """Cut ``n_instances`` consecutive non-overlapping clips from frame 0.

    Videos shorter than ``n_instances * clip_len`` are extended by looping.
    """
    if n_instances < 1 or clip_len < 1:
        raise ValueError("n_instances and clip_len must be >= 1")
    if len(frames) == 0:
        raise ValueError("cannot build a bag from an empty frame sequence")
    need = n_instances * clip_len
    idx = np.arange(need) % len(frames)
    clips = np.asarray(frames)[idx].reshape(n_instances, clip_len, *frames.shape[1:])
    ranges = [(i * clip_len, (i + 1) * clip_len) for i in range(n_instances)]
    return InstanceBag(clips=clips, frame_ranges=ranges, source_id=source_id)


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    rest = n - sum(counts)
    # ties go to the earlier split
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


def split_dataset(manifest: list[dict], fractions, seed: int = 0) -> list[dict]:
    """Assign train/val/test tags stratified by grade.

    ``fractions`` is either a 3-tuple used for every grade or a mapping
    ``grade -> 3-tuple``.
    """
    def fr(grade):
        f = fractions[grade] if isinstance(fractions, dict) else fractions
        if len(f) != 3 or abs(sum(f) - 1.0) > 1e-9 or min(f) < 0:
            raise ValueError(f"split fractions for grade {grade} must be 3 non-negative values summing to 1, got {f}")
        return f

    rng = np.random.default_rng(seed)
    out = [dict(rec) for rec in manifest]
    for grade in sorted({rec["grade"] for rec in out}):
        members = [k for k, rec in enumerate(out) if rec["grade"] == grade]
        counts = _largest_remainder(len(members), fr(grade))
        perm = rng.permutation(len(members))
        tags = np.repeat(SPLITS, counts)
        for pos, k in enumerate(perm):
            out[members[k]]["split"] = str(tags[pos])
    return out


def load_video(root, record: dict) -> np.ndarray:
    vdir = Path(root) / record["dir"]
    files = sorted(vdir.glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"sample {record['id']}: no frames found in {vdir}")
    if "n_frames" in record and len(files) != record["n_frames"]:
        raise FileNotFoundError(
            f"sample {record['id']}: expected {record['n_frames']} frames, found {len(files)}")
    return np.stack([read_ppm(f) for f in files])


def load_bags(root, records: list[dict], out_hw=(48, 48), n_instances: int = 3,
              clip_len: int = 16) -> np.ndarray:
    """Load records into a uint8 array of shape ``[N, I, T, 3, H', W']``."""
    bags = []
    for rec in records:
        frames = crop_and_resize(load_video(root, rec), rec["roi"], out_hw)
        bags.append(make_bag(frames, n_instances, clip_len, rec["id"]).clips)
    if not bags:
        return np.zeros((0, n_instances, clip_len, 3, *out_hw), dtype=np.uint8)
    return np.stack(bags)


def load_split(root, split: str, manifest=None, **kw):
    """Return ``(bags, grades, records)`` for one split of a dataset directory."""
    root = Path(root)
    if manifest is None:
        manifest = read_manifest(root / "manifest.jsonl")
    records = [rec for rec in manifest if rec["split"] == split]
    grades = np.array([rec["grade"] for rec in records], dtype=np.int64)
    return load_bags(root, records, **kw), grades, records
