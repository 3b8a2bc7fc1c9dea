"""Training loop, model selection and low-data fine-tuning."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .data import ImageSample, iter_batches
from .evaluator import EvalReport, evaluate, predict_batches
from .losses import LossWeights, activation_loss, reconstruction_loss, segmentation_loss, total_loss
from .model import Depth, ModelConfig, YShapedAutoencoder, build_model

log = logging.getLogger(__name__)

SELECTION_RULE = "best_cls_acc_with_reasonable_seg"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: Optional[int] = None  # None: 100 shallower, 50 deeper
    loss_weights: Optional[LossWeights] = None  # None: the variant's preset
    seed: int = 0
    selection_rule: str = SELECTION_RULE
    eval_batch_size: int = 32

    def resolved(self, model_config: ModelConfig) -> "TrainConfig":
        epochs = self.epochs
        if epochs is None:
            epochs = 100 if model_config.depth is Depth.SHALLOWER else 50
        weights = self.loss_weights or LossWeights.for_variant(model_config.variant)
        return replace(self, epochs=epochs, loss_weights=weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = None if self.loss_weights is None else self.loss_weights.to_dict()
        return d


@dataclass
class FinetuneConfig:
    frames_per_video: int = 10
    train_videos_per_class: int = 100
    eval_videos_per_class: int = 40
    epochs: int = 50
    base_checkpoint: Optional[str] = None


@dataclass
class EpochRecord:
    epoch: int
    l_act: float
    l_seg: Optional[float]
    l_rec: Optional[float]
    total: float
    val_acc: float
    val_seg_loss: Optional[float]
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    model: YShapedAutoencoder
    best_epoch: int
    best_val_acc: float
    log: list[EpochRecord] = field(default_factory=list)


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.epsilon)


def batch_losses(model: YShapedAutoencoder, batch, weights: LossWeights, labels=None):
    """Forward one batch and build its LossReport. ``labels=None`` uses
    inference-mode selection."""
    out = model(batch.x, labels)
    cfg = model.config
    l_act = activation_loss(out.latent.a0, out.latent.a1, batch.labels)
    l_seg = segmentation_loss(out.fake_prob, batch.masks) if cfg.has_seg_branch else None
    l_rec = reconstruction_loss(out.recon, batch.target, weights.rec_norm) if cfg.has_rec_branch else None
    report = total_loss(l_act, weights, l_seg, l_rec, has_seg_branch=cfg.has_seg_branch,
                        has_rec_branch=cfg.has_rec_branch, batch_size=len(batch))
    return out, report


@torch.no_grad()
def validate(model: YShapedAutoencoder, samples: Sequence[ImageSample], batch_size: int = 32):
    """Frame-level accuracy at 0.5 and segmentation loss under inference selection."""
    model.eval()
    correct = 0
    seg_sum = 0.0
    n = 0
    for batch, out in predict_batches(model, samples, batch_size):
        preds = (out.scores > 0.5).long()
        correct += int((preds == batch.labels).sum())
        if out.seg_map is not None:
            seg_sum += float(segmentation_loss(out.fake_prob, batch.masks)) * len(batch)
        n += len(batch)
    seg = seg_sum / n if model.config.has_seg_branch else None
    return correct / n, seg


def _selection_key(rec: EpochRecord):
    seg = rec.val_seg_loss if rec.val_seg_loss is not None else 0.0
    return (rec.val_acc, -seg, -rec.epoch)


def _set_determinism(seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def fit(model: YShapedAutoencoder, train_samples: Sequence[ImageSample], val_samples: Sequence[ImageSample],
        cfg: TrainConfig, log_path=None, on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs starting from ``model``'s current weights and
    return the selected weights. ``cfg`` must already be resolved."""
    if not train_samples or not val_samples:
        raise ValueError("training and validation sets must be non-empty")
    _set_determinism(cfg.seed)
    weights = cfg.loss_weights
    opt = make_optimizer(model.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    records: list[EpochRecord] = []
    best_state = copy.deepcopy(model.state_dict())
    best: Optional[EpochRecord] = None
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    t0 = time.perf_counter()
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            sums = {"l_act": 0.0, "l_seg": 0.0, "l_rec": 0.0, "total": 0.0}
            seen = 0
            for batch in iter_batches(train_samples, cfg.batch_size, rng):
                _, report = batch_losses(model, batch, weights, labels=batch.labels)
                if not torch.isfinite(report.total):
                    raise TrainingDiverged(
                        f"non-finite total loss at epoch {epoch}: {report.as_floats()}")
                opt.zero_grad(set_to_none=True)
                report.total.backward()
                opt.step()
                for k, v in report.as_floats().items():
                    if v is not None:
                        sums[k] += v * len(batch)
                seen += len(batch)
            val_acc, val_seg = validate(model, val_samples, cfg.eval_batch_size)
            cfgm = model.config
            rec = EpochRecord(
                epoch=epoch,
                l_act=sums["l_act"] / seen,
                l_seg=sums["l_seg"] / seen if cfgm.has_seg_branch else None,
                l_rec=sums["l_rec"] / seen if cfgm.has_rec_branch else None,
                total=sums["total"] / seen,
                val_acc=val_acc,
                val_seg_loss=val_seg,
                wall_time=time.perf_counter() - t0,
            )
            records.append(rec)
            if log_file:
                log_file.write(rec.to_json() + "\n")
                log_file.flush()
            log.info("epoch %d total=%.4f val_acc=%.4f val_seg=%s", epoch, rec.total, val_acc, val_seg)
            if on_epoch:
                on_epoch(rec)
            if best is None or _selection_key(rec) > _selection_key(best):
                best = rec
                best_state = copy.deepcopy(model.state_dict())
    finally:
        if log_file:
            log_file.close()
    model.load_state_dict(best_state)
    model.eval()
    if best is None:
        return TrainResult(model, 0, float("nan"), records)
    return TrainResult(model, best.epoch, best.val_acc, records)


def train(model_config: ModelConfig, train_samples, val_samples, cfg: TrainConfig = TrainConfig(),
          log_path=None, on_epoch=None) -> TrainResult:
    """Train a freshly initialised model and keep the epoch with the best
    validation accuracy (ties: lower validation segmentation loss, then the
    earlier epoch)."""
    cfg = cfg.resolved(model_config)
    if cfg.epochs < 1:
        raise ValueError("nothing to train: epochs must be >= 1")
    model = build_model(model_config, seed=cfg.seed)
    return fit(model, train_samples, val_samples, cfg, log_path, on_epoch)


def apply_budget(samples: Sequence[ImageSample], videos_per_class: int, frames_per_video: int):
    """First ``videos_per_class`` videos of each class (sorted ids), first
    ``frames_per_video`` frames of each."""
    keep = set()
    for label in (0, 1):
        vids = sorted({s.video_id for s in samples if s.label == label})
        keep.update(vids[:videos_per_class])
    out = [s for s in samples if s.video_id in keep and s.frame_index < frames_per_video]
    return sorted(out, key=lambda s: (s.video_id, s.frame_index))


@dataclass
class FinetuneResult:
    model: YShapedAutoencoder
    best_epoch: int
    before: EvalReport
    after: EvalReport
    log: list[EpochRecord] = field(default_factory=list)


def finetune(base: YShapedAutoencoder, train_samples, eval_samples, ft: FinetuneConfig = FinetuneConfig(),
             cfg: TrainConfig = TrainConfig(), test_samples=None, expect: Optional[ModelConfig] = None,
             log_path=None, on_epoch=None) -> FinetuneResult:
    """Continue training ``base`` on a small unseen-attack budget.

    The before/after reports are computed on ``test_samples`` when given,
    otherwise on the budgeted evaluation split.
    """
    if expect is not None and expect != base.config:
        raise ValueError(f"checkpoint config {base.config.to_dict()} incompatible with {expect.to_dict()}")
    if ft.epochs < 0:
        raise ValueError("epochs must be >= 0")
    train_set = apply_budget(train_samples, ft.train_videos_per_class, ft.frames_per_video)
    eval_set = apply_budget(eval_samples, ft.eval_videos_per_class, ft.frames_per_video)
    report_set = test_samples if test_samples is not None else eval_set
    model = copy.deepcopy(base)
    model.eval()
    before = evaluate(model, report_set, level="frame")
    cfg = replace(cfg.resolved(base.config), epochs=ft.epochs)
    if ft.epochs == 0:
        return FinetuneResult(model, 0, before, before, [])
    result = fit(model, train_set, eval_set, cfg, log_path, on_epoch)
    after = evaluate(result.model, report_set, level="frame")
    return FinetuneResult(result.model, result.best_epoch, before, after, result.log)


def read_log(path) -> list[EpochRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EpochRecord(**json.loads(line)) for line in fh if line.strip()]
