"""Sample containers, preprocessing, manifest ingestion and corpus export."""

from __future__ import annotations

import csv
import io
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from PIL import Image

IMAGE_SIDE = 256
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

ATTACK_TAGS = ("none", "smooth_blob", "rectangle", "polygon", "external")
SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ["video_id", "frame_path", "mask_path", "label", "split"]


@dataclass
class ImageSample:
    pixels: np.ndarray  # float32, 3xHxW in [0, 1]
    label: int
    mask: np.ndarray  # uint8, 1xHxW in {0, 1}
    video_id: str
    frame_index: int
    attack_tag: str = "none"

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.label == 0 and self.mask.any():
            raise ValueError(f"real sample {self.video_id}/{self.frame_index} has a non-empty mask")
        if self.attack_tag not in ATTACK_TAGS:
            raise ValueError(f"unknown attack tag {self.attack_tag!r}")


@dataclass(frozen=True)
class SplitSpec:
    train_videos: Optional[int] = None  # per class; None keeps all
    val_videos: Optional[int] = None
    test_videos: Optional[int] = None
    frames_train: int = 200
    frames_eval: int = 10

    def frames_for(self, split: str) -> int:
        return self.frames_train if split == "train" else self.frames_eval

    def videos_for(self, split: str) -> Optional[int]:
        return {"train": self.train_videos, "val": self.val_videos, "test": self.test_videos}.get(split)


class ManifestError(ValueError):
    pass


def normalize(pixels):
    """Per-channel ImageNet normalization of a [0, 1] image (3xHxW or Bx3xHxW)."""
    lo, hi = float(pixels.min()), float(pixels.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"pixels must lie in [0, 1], got range [{lo}, {hi}]")
    mean, std = _channel_consts(pixels)
    return (pixels - mean) / std


def denormalize(x):
    mean, std = _channel_consts(x)
    return x * std + mean


def to_recon_target(pixels):
    return 2 * pixels - 1


def _channel_consts(x):
    shape = (3, 1, 1)
    if isinstance(x, torch.Tensor):
        return (torch.as_tensor(MEAN, dtype=x.dtype).view(shape),
                torch.as_tensor(STD, dtype=x.dtype).view(shape))
    return MEAN.reshape(shape).astype(x.dtype), STD.reshape(shape).astype(x.dtype)


@dataclass
class Batch:
    x: torch.Tensor  # normalized input
    target: torch.Tensor  # reconstruction target in [-1, 1]
    masks: torch.Tensor  # B x H x W float
    labels: torch.Tensor  # B long

    def __len__(self):
        return self.labels.shape[0]


def collate(samples: Sequence[ImageSample]) -> Batch:
    pix = torch.from_numpy(np.stack([s.pixels for s in samples]).astype(np.float32))
    masks = torch.from_numpy(np.stack([s.mask[0] for s in samples]).astype(np.float32))
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    return Batch(normalize(pix), to_recon_target(pix), masks, labels)


def iter_batches(samples: Sequence[ImageSample], batch_size: int,
                 rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    """Yield batches in logical order, or in an ``rng``-shuffled order.
    The final partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for lo in range(0, len(order), batch_size):
        yield collate([samples[i] for i in order[lo:lo + batch_size]])


def sort_samples(samples):
    return sorted(samples, key=lambda s: (s.video_id, s.frame_index))


# -- manifest ingestion --------------------------------------------------------

@dataclass
class ManifestRow:
    line: int
    video_id: str
    frame_path: str
    mask_path: Optional[str]
    label: int
    split: str
    bbox: Optional[tuple[int, int, int, int]]
    frame_index: int = -1


_TRAILING_INT = re.compile(r"(\d+)(?!.*\d)")


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    rows = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        fields = [f.strip() for f in fields]
        if not fields or not any(fields) or fields[0].startswith("#"):
            continue
        if lineno == 1 and fields[0] == "video_id":
            continue
        if len(fields) not in (5, 9):
            raise ManifestError(f"{path}:{lineno}: expected 5 or 9 fields, got {len(fields)}")
        video_id, frame, mask, label, split = fields[:5]
        if label not in ("0", "1"):
            raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        if not video_id or not frame:
            raise ManifestError(f"{path}:{lineno}: empty video_id or frame_path")
        bbox = None
        if len(fields) == 9:
            try:
                bbox = tuple(int(v) for v in fields[5:])
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bounding box must be four integers") from None
            if not (bbox[2] > bbox[0] and bbox[3] > bbox[1]):
                raise ManifestError(f"{path}:{lineno}: empty bounding box {bbox}")
        mask_path = None if mask.upper() == "NONE" or mask == "" else mask
        if label == "1" and mask_path is None:
            raise ManifestError(f"{path}:{lineno}: fake sample without mask")
        rows.append(ManifestRow(lineno, video_id, frame, mask_path, int(label), split, bbox))
    _assign_frame_indices(rows)
    return rows


def _assign_frame_indices(rows):
    # trailing integer of the frame file stem; falls back to row order per video
    by_video: dict[str, list[ManifestRow]] = {}
    for r in rows:
        by_video.setdefault(r.video_id, []).append(r)
    for group in by_video.values():
        parsed = [_TRAILING_INT.search(Path(r.frame_path).stem) for r in group]
        if all(parsed):
            for r, m in zip(group, parsed):
                r.frame_index = int(m.group(1))
        else:
            for i, r in enumerate(group):
                r.frame_index = i


def _select(rows, split: str, spec: SplitSpec):
    rows = [r for r in rows if r.split == split and r.frame_index < spec.frames_for(split)]
    rows.sort(key=lambda r: (r.video_id, r.frame_index))
    limit = spec.videos_for(split)
    if limit is not None:
        keep = set()
        for label in (0, 1):
            vids = sorted({r.video_id for r in rows if r.label == label})
            keep.update(vids[:limit])
        rows = [r for r in rows if r.video_id in keep]
    return rows


def load_image(path, bbox=None, side: int = IMAGE_SIDE) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if bbox is not None:
            im = im.crop(bbox)
        if im.size != (side, side):
            im = im.resize((side, side), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path, bbox=None, side: int = IMAGE_SIDE) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L")
        if bbox is not None:
            im = im.crop(bbox)
        if im.size != (side, side):
            im = im.resize((side, side), Image.NEAREST)
        arr = np.asarray(im, dtype=np.uint8)
    return (arr >= 128).astype(np.uint8)[None]


def _load_row(root: Path, row: ManifestRow) -> ImageSample:
    frame = root / row.frame_path
    if not frame.is_file():
        raise ManifestError(f"line {row.line}: missing frame file {frame}")
    pixels = load_image(frame, row.bbox)
    if row.mask_path is None:
        mask = np.zeros((1, IMAGE_SIDE, IMAGE_SIDE), dtype=np.uint8)
    else:
        mpath = root / row.mask_path
        if not mpath.is_file():
            raise ManifestError(f"line {row.line}: missing mask file {mpath}")
        mask = load_mask(mpath, row.bbox)
        if row.label == 0:
            mask = np.zeros_like(mask)
    tag = "external" if row.label == 1 else "none"
    return ImageSample(pixels, row.label, mask, row.video_id, row.frame_index, tag)


def ingest_dataset(root, manifest="manifest.csv", split: SplitSpec = SplitSpec(),
                   splits: Sequence[str] = SPLITS, workers: int = 1) -> dict[str, list[ImageSample]]:
    """Load the listed splits from a manifest, applying the first-N-frames rule.

    Samples come back sorted by (video_id, frame_index) regardless of worker
    count.
    """
    root = Path(root)
    mpath = Path(manifest)
    if not mpath.is_absolute():
        mpath = root / mpath
    rows = read_manifest(mpath)
    out = {}
    for name in splits:
        selected = _select(rows, name, split)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                out[name] = list(ex.map(lambda r: _load_row(root, r), selected))
        else:
            out[name] = [_load_row(root, r) for r in selected]
    return out


# -- export ----------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def write_png(path, arr: np.ndarray):
    """Write a 3xHxW float image in [0, 1] or an HxW uint8 array."""
    if arr.ndim == 3:
        Image.fromarray(to_uint8(arr).transpose(1, 2, 0), mode="RGB").save(path)
    else:
        Image.fromarray(arr, mode="L").save(path)


def export_corpus(splits: dict[str, list[ImageSample]], out_dir, manifest_name="manifest.csv") -> Path:
    """Write samples as 8-bit PNG frames and masks plus a manifest."""
    out = Path(out_dir)
    lines = [",".join(MANIFEST_HEADER)]
    for split, samples in splits.items():
        for s in samples:
            vdir = out / split / s.video_id
            vdir.mkdir(parents=True, exist_ok=True)
            frame_rel = f"{split}/{s.video_id}/frame_{s.frame_index:04d}.png"
            write_png(out / frame_rel, s.pixels)
            mask_rel = "NONE"
            if s.label == 1:
                mask_rel = f"{split}/{s.video_id}/mask_{s.frame_index:04d}.png"
                write_png(out / mask_rel, (s.mask[0] * 255).astype(np.uint8))
            lines.append(",".join([s.video_id, frame_rel, mask_rel, str(s.label), split]))
    mpath = out / manifest_name
    mpath.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return mpath
