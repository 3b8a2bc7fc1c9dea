"""Activation, segmentation and reconstruction losses and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import torch

PROB_CLAMP = 1e-7


class RecNorm(str, Enum):
    L1 = "L1"
    L2 = "L2"
    MSE = "MSE"


class LossConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    gamma_act: float = 1.0
    gamma_seg: float = 1.0
    gamma_rec: float = 1.0
    rec_norm: RecNorm = RecNorm.L2

    def __post_init__(self):
        object.__setattr__(self, "rec_norm", RecNorm(self.rec_norm))
        for name in ("gamma_act", "gamma_seg", "gamma_rec"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def preset(cls, name: str) -> "LossWeights":
        return PRESETS[name.upper()]

    @classmethod
    def for_variant(cls, variant) -> "LossWeights":
        from .model import Variant

        new = Variant(variant) in (Variant.NO_RECON, Variant.PROPOSED_NEW)
        return PRESETS["NEW" if new else "OLD"]

    def to_dict(self) -> dict:
        return {"gamma_act": self.gamma_act, "gamma_seg": self.gamma_seg,
                "gamma_rec": self.gamma_rec, "rec_norm": self.rec_norm.value}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(float(d["gamma_act"]), float(d["gamma_seg"]), float(d["gamma_rec"]),
                   RecNorm(d["rec_norm"]))


PRESETS = {
    "OLD": LossWeights(1.0, 0.1, 0.1, RecNorm.L1),
    "NEW": LossWeights(1.0, 1.0, 1.0, RecNorm.MSE),
}


@dataclass
class LossReport:
    l_act: torch.Tensor
    l_seg: Optional[torch.Tensor]
    l_rec: Optional[torch.Tensor]
    total: torch.Tensor
    batch_size: int
    weights: LossWeights

    def as_floats(self) -> dict:
        f = lambda t: None if t is None else float(t.detach())
        return {"l_act": f(self.l_act), "l_seg": f(self.l_seg), "l_rec": f(self.l_rec),
                "total": f(self.total)}


def activation_loss(a0, a1, labels) -> torch.Tensor:
    a0, a1 = torch.as_tensor(a0), torch.as_tensor(a1)
    y = torch.as_tensor(labels).to(a1.dtype)
    if not (a0.shape == a1.shape == y.shape) or a0.dim() != 1:
        raise ValueError(f"activation/label length mismatch: {tuple(a0.shape)}, {tuple(a1.shape)}, {tuple(y.shape)}")
    if a0.numel() == 0:
        raise ValueError("empty batch")
    return ((a1 - y).abs() + (a0 - (1 - y)).abs()).mean()


def segmentation_loss(pred_mask, gt_mask) -> torch.Tensor:
    """Mean binary cross-entropy between fake-region probabilities and a binary
    ground-truth mask, averaged over samples and pixels."""
    s, m = torch.as_tensor(pred_mask), torch.as_tensor(gt_mask)
    if s.shape != m.shape:
        raise ValueError(f"mask shape mismatch: {tuple(s.shape)} vs {tuple(m.shape)}")
    if not bool(((m == 0) | (m == 1)).all()):
        raise ValueError("ground-truth mask must be binary")
    m = m.to(s.dtype)
    s = s.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    return -(m * torch.log(s) + (1 - m) * torch.log(1 - s)).mean()


def reconstruction_loss(recon, target, norm=RecNorm.L2) -> torch.Tensor:
    """L2: batch mean of per-sample Euclidean distance.
    MSE: mean squared error over all elements.
    L1: mean absolute error over all elements."""
    x_hat, x = torch.as_tensor(recon), torch.as_tensor(target)
    if x_hat.shape != x.shape:
        raise ValueError(f"reconstruction shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    diff = (x - x_hat).flatten(1)
    norm = RecNorm(norm)
    if norm is RecNorm.L2:
        return torch.linalg.vector_norm(diff, ord=2, dim=1).mean()
    if norm is RecNorm.MSE:
        return diff.square().mean(dim=1).mean()
    return diff.abs().mean(dim=1).mean()


def total_loss(l_act, weights: LossWeights, l_seg=None, l_rec=None, *,
               has_seg_branch: Optional[bool] = None, has_rec_branch: Optional[bool] = None,
               batch_size: int = 0) -> LossReport:
    """Weighted sum; absent components contribute zero.

    When branch flags are given, a component must be present exactly when its
    branch exists.
    """
    for name, comp, flag in (("segmentation", l_seg, has_seg_branch),
                             ("reconstruction", l_rec, has_rec_branch)):
        if flag is not None and flag != (comp is not None):
            state = "missing" if flag else "given"
            raise LossConfigError(f"{name} loss {state} but model has_{name[:3]}_branch={flag}")
    l_act = torch.as_tensor(l_act)
    total = weights.gamma_act * l_act
    if l_seg is not None:
        l_seg = torch.as_tensor(l_seg)
        total = total + weights.gamma_seg * l_seg
    if l_rec is not None:
        l_rec = torch.as_tensor(l_rec)
        total = total + weights.gamma_rec * l_rec
    return LossReport(l_act=l_act, l_seg=l_seg, l_rec=l_rec, total=total,
                      batch_size=batch_size, weights=weights)
