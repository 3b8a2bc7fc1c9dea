"""Inference, metrics (accuracy, EER, pixel accuracy) and video aggregation."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from .data import ImageSample, iter_batches, write_png

DECISION_THRESHOLD = 0.5
MASK_THRESHOLD = 0.5


@dataclass
class FrameScores:
    scores: np.ndarray  # (n,) float64
    labels: np.ndarray  # (n,) int
    video_ids: list[str]
    frame_indices: list[int]
    seg: Optional[np.ndarray]  # (n, H, W) fake-channel probabilities
    masks: np.ndarray  # (n, H, W) uint8 ground truth

    def __len__(self):
        return len(self.scores)


@torch.no_grad()
def predict_batches(model, samples: Sequence[ImageSample], batch_size: int = 32):
    model.eval()
    for batch in iter_batches(samples, batch_size):
        yield batch, model(batch.x)


def score_frames(model, samples: Sequence[ImageSample], batch_size: int = 32) -> FrameScores:
    """Inference-mode scores and fake-channel segmentation maps per frame."""
    scores, segs = [], []
    for _, out in predict_batches(model, samples, batch_size):
        scores.append(out.scores.numpy())
        if out.seg_map is not None:
            segs.append(out.fake_prob.float().numpy())
    side = model.config.input_side
    has_seg = model.config.has_seg_branch
    return FrameScores(
        scores=np.concatenate(scores) if scores else np.zeros(0),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        video_ids=[s.video_id for s in samples],
        frame_indices=[s.frame_index for s in samples],
        seg=(np.concatenate(segs) if segs else np.zeros((0, side, side), np.float32)) if has_seg else None,
        masks=np.stack([s.mask[0] for s in samples]) if samples else np.zeros((0, side, side), np.uint8),
    )


def group_by_video(video_ids: Sequence[str], values: Sequence[float]) -> "OrderedDict[str, list[float]]":
    groups: OrderedDict[str, list[float]] = OrderedDict()
    for vid, v in zip(video_ids, values):
        groups.setdefault(vid, []).append(float(v))
    return groups


def aggregate_video(groups: Mapping[str, Sequence[float]]) -> dict[str, float]:
    """Mean frame score per video."""
    out = {}
    for vid, vals in groups.items():
        if len(vals) == 0:
            raise ValueError(f"video {vid!r} has no frames")
        out[vid] = float(np.mean(np.asarray(vals, dtype=np.float64)))
    return out


def _check_binary_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def roc_points(scores, labels):
    """(thresholds, FAR, FRR) over every distinct cut of the sorted scores.

    A sample is accepted as fake when score >= t. Thresholds sit at the
    midpoints between consecutive distinct scores, plus -inf and +inf.
    """
    scores, labels = _check_binary_labels(scores, labels)
    n_real = int((labels == 0).sum())
    n_fake = int((labels == 1).sum())
    if n_real == 0 or n_fake == 0:
        raise ValueError("EER needs both real and fake samples")
    uniq = np.unique(scores)
    # cut i accepts every score >= uniq[i]; cut len(uniq) accepts nothing
    real_below = np.searchsorted(np.sort(scores[labels == 0]), uniq, side="left")
    fake_below = np.searchsorted(np.sort(scores[labels == 1]), uniq, side="left")
    real_below = np.append(real_below, n_real)
    fake_below = np.append(fake_below, n_fake)
    far = (n_real - real_below) / n_real
    frr = fake_below / n_fake
    thresholds = np.concatenate([[-np.inf], (uniq[:-1] + uniq[1:]) / 2, [np.inf]])
    return thresholds, far, frr


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and the threshold it was read at.

    Picks the cut minimising |FAR - FRR|, then FAR + FRR, then the smaller
    threshold, and reports (FAR + FRR) / 2 there.
    """
    t, far, frr = roc_points(scores, labels)
    order = np.lexsort((t, far + frr, np.abs(far - frr)))
    i = order[0]
    return float((far[i] + frr[i]) / 2), float(t[i])


def classification_accuracy(scores, labels, threshold: float = DECISION_THRESHOLD) -> float:
    scores, labels = _check_binary_labels(scores, labels)
    if scores.size == 0:
        raise ValueError("empty score set")
    return float(np.mean((scores > threshold).astype(np.int64) == labels))


def pixel_accuracy(pred, gt, threshold: float = MASK_THRESHOLD) -> float:
    """Fraction of pixels whose binarized prediction matches the binary mask."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground-truth masks must be binary")
    if gt.size == 0:
        raise ValueError("no pixels to compare")
    return float(np.mean((pred > threshold) == (gt == 1)))


@dataclass
class EvalReport:
    cls_accuracy: float
    eer: float
    seg_pixel_accuracy: Optional[float]
    level: str
    n_samples: int
    threshold_used: float = DECISION_THRESHOLD
    eer_threshold: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def to_record(self, test_name: str = "", variant: str = "", checkpoint_id: str = "") -> dict:
        metrics = self.to_dict()
        eer_t = metrics.pop("eer_threshold")
        metrics["eer_threshold"] = None if not math.isfinite(eer_t) else eer_t
        return {"test": test_name, "variant": variant, "level": self.level,
                "checkpoint": checkpoint_id, "metrics": metrics}

    def table(self, title: str = "") -> str:
        seg = "—" if self.seg_pixel_accuracy is None else f"{100 * self.seg_pixel_accuracy:.2f}"
        lines = [title] if title else []
        lines += [f"{'Acc (%)':>8} {'EER (%)':>8} {'Seg Acc (%)':>12}  level={self.level} n={self.n_samples}",
                  f"{100 * self.cls_accuracy:8.2f} {100 * self.eer:8.2f} {seg:>12}"]
        return "\n".join(lines)


def evaluate(model, samples: Sequence[ImageSample], level: str = "frame", fake_only_pixels: bool = False,
             batch_size: int = 32, frames: Optional[FrameScores] = None) -> EvalReport:
    """Score a test stream and reduce it to an EvalReport.

    At video level classification uses per-video mean scores; pixel accuracy
    is always computed per frame.
    """
    if level not in ("frame", "video"):
        raise ValueError(f"level must be 'frame' or 'video', got {level!r}")
    fs = frames if frames is not None else score_frames(model, samples, batch_size)
    if len(fs) == 0:
        raise ValueError("empty test stream")
    scores, labels = fs.scores, fs.labels
    if level == "video":
        groups = group_by_video(fs.video_ids, scores)
        label_of = {}
        for vid, y in zip(fs.video_ids, labels):
            if label_of.setdefault(vid, int(y)) != int(y):
                raise ValueError(f"video {vid!r} mixes real and fake frames")
        means = aggregate_video(groups)
        scores = np.array([means[v] for v in groups])
        labels = np.array([label_of[v] for v in groups])
    eer, eer_t = compute_eer(scores, labels)
    seg_acc = None
    if fs.seg is not None:
        sel = fs.labels == 1 if fake_only_pixels else np.ones(len(fs), dtype=bool)
        seg_acc = pixel_accuracy(fs.seg[sel], fs.masks[sel])
    return EvalReport(cls_accuracy=classification_accuracy(scores, labels), eer=eer,
                      seg_pixel_accuracy=seg_acc, level=level, n_samples=len(scores),
                      eer_threshold=eer_t)


def export_masks(frames: FrameScores, out_dir) -> list[Path]:
    """Write each fake-channel probability map as an 8-bit grayscale PNG."""
    if frames.seg is None:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for prob, vid, idx in zip(frames.seg, frames.video_ids, frames.frame_indices):
        p = out / f"{vid}_{idx:04d}.png"
        write_png(p, np.clip(np.rint(prob * 255), 0, 255).astype(np.uint8))
        paths.append(p)
    return paths


def export_roc(scores, labels, path):
    t, far, frr = roc_points(scores, labels)
    rows = [{"threshold": None if not math.isfinite(x) else float(x), "far": float(a), "frr": float(r)}
            for x, a, r in zip(t, far, frr)]
    Path(path).write_text(json.dumps(rows, indent=1), encoding="utf-8")
