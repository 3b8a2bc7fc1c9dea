"""Y-shaped autoencoder: shared encoder, partitioned latent, segmentation and
reconstruction decoders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import torch
import torch.nn as nn

CLASSIFY_EPS = 1e-8


class Variant(str, Enum):
    FT = "FT"
    FT_RES = "FT_Res"
    DEEPER_FT = "Deeper_FT"
    PROPOSED_OLD = "Proposed_Old"
    NO_RECON = "No_Recon"
    PROPOSED_NEW = "Proposed_New"


class Depth(str, Enum):
    SHALLOWER = "shallower"
    DEEPER = "deeper"


# variant -> (depth, has_seg_branch, has_rec_branch)
VARIANT_LAYOUT = {
    Variant.FT_RES: (Depth.SHALLOWER, False, True),
    Variant.FT: (Depth.SHALLOWER, False, True),
    Variant.DEEPER_FT: (Depth.DEEPER, False, True),
    Variant.PROPOSED_OLD: (Depth.DEEPER, True, True),
    Variant.NO_RECON: (Depth.DEEPER, True, False),
    Variant.PROPOSED_NEW: (Depth.DEEPER, True, True),
}

# (out_channels, stride) per 3x3 conv; the last entry's channels are replaced
# by latent_channels.
ENCODER_SCHEDULES = {
    Depth.DEEPER: [(16, 1), (32, 2), (32, 1), (64, 2), (64, 1), (64, 2),
                   (128, 1), (128, 2), (128, 2)],
    Depth.SHALLOWER: [(16, 1), (16, 2), (64, 1), (64, 2), (128, 1), (128, 2)],
}


class UnimplementedVariantError(NotImplementedError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.PROPOSED_NEW
    latent_channels: int = 128
    input_side: int = 256

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.latent_channels <= 0 or self.latent_channels % 2:
            raise ValueError(f"latent_channels must be a positive even number, got {self.latent_channels}")
        factor = 2 ** self.n_halvings
        if self.input_side <= 0 or self.input_side % factor:
            raise ValueError(f"input_side must be a positive multiple of {factor}, got {self.input_side}")

    @property
    def depth(self) -> Depth:
        return VARIANT_LAYOUT[self.variant][0]

    @property
    def has_seg_branch(self) -> bool:
        return VARIANT_LAYOUT[self.variant][1]

    @property
    def has_rec_branch(self) -> bool:
        return VARIANT_LAYOUT[self.variant][2]

    @property
    def runnable(self) -> bool:
        return self.variant is not Variant.FT_RES

    @property
    def n_halvings(self) -> int:
        return sum(1 for _, s in ENCODER_SCHEDULES[self.depth] if s == 2)

    @property
    def latent_side(self) -> int:
        return self.input_side // 2 ** self.n_halvings

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_side, self.latent_side)

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "latent_channels": self.latent_channels,
                "input_side": self.input_side}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(variant=Variant(d["variant"]), latent_channels=int(d.get("latent_channels", 128)),
                   input_side=int(d.get("input_side", 256)))


@dataclass
class LatentCode:
    """Encoder output split channel-wise into the real half ``h0`` and the fake
    half ``h1``, with batched activations ``a0``/``a1`` of shape (B,)."""

    h0: torch.Tensor
    h1: torch.Tensor
    a0: torch.Tensor = field(init=False)
    a1: torch.Tensor = field(init=False)

    def __post_init__(self):
        if self.h0.shape != self.h1.shape:
            raise ValueError("latent halves must have identical shapes")
        self.a0 = activation(self.h0, self.K)
        self.a1 = activation(self.h1, self.K)

    @property
    def K(self) -> int:
        # element count of the concatenated latent {h0|h1}, per sample
        return 2 * math.prod(self.h0.shape[1:])

    @classmethod
    def split(cls, h: torch.Tensor) -> "LatentCode":
        half = h.shape[1] // 2
        return cls(h[:, :half], h[:, half:])

    def joined(self) -> torch.Tensor:
        return torch.cat([self.h0, self.h1], dim=1)


def activation(h_half: torch.Tensor, K: int) -> torch.Tensor:
    """L1 norm of one latent half divided by 2K, per sample."""
    return h_half.abs().flatten(1).sum(dim=1) / (2 * K)


def selection_block(latent: LatentCode, keep) -> torch.Tensor:
    """Return {h0|h1} with the half not named by ``keep`` zeroed.

    ``keep`` is a class index or a per-sample tensor of class indices.
    """
    keep = torch.as_tensor(keep, device=latent.h0.device)
    if keep.dim() == 0:
        keep = keep.expand(latent.h0.shape[0])
    if not bool(((keep == 0) | (keep == 1)).all()):
        raise ValueError("keep must contain only 0 or 1")
    view = (-1,) + (1,) * (latent.h0.dim() - 1)
    keep1 = keep.to(latent.h0.dtype).view(view)
    return torch.cat([latent.h0 * (1 - keep1), latent.h1 * keep1], dim=1)


def predicted_class(latent: LatentCode) -> torch.Tensor:
    # ties go to class 0, consistent with classify() giving <= 0.5
    return (latent.a1 > latent.a0).long()


def classify(a0, a1) -> torch.Tensor:
    """Probability of being fake, a1 / (a0 + a1 + eps), computed in float64."""
    a0 = torch.as_tensor(a0, dtype=torch.float64)
    a1 = torch.as_tensor(a1, dtype=torch.float64)
    return a1 / (a0 + a1 + CLASSIFY_EPS)


@dataclass
class ForwardOutput:
    latent: LatentCode
    decoder_input: torch.Tensor
    seg_map: Optional[torch.Tensor] = None
    recon: Optional[torch.Tensor] = None

    @property
    def scores(self) -> torch.Tensor:
        return classify(self.latent.a0.detach(), self.latent.a1.detach())

    @property
    def fake_prob(self) -> Optional[torch.Tensor]:
        return None if self.seg_map is None else self.seg_map[:, 1]


def _conv_block(cin, cout, stride):
    return [nn.Conv2d(cin, cout, 3, stride, 1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]


def _deconv_block(cin, cout, stride):
    return [nn.ConvTranspose2d(cin, cout, 3, stride, 1, output_padding=stride - 1),
            nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]


def _layer_plan(config: ModelConfig):
    plan = list(ENCODER_SCHEDULES[config.depth])
    plan[-1] = (config.latent_channels, plan[-1][1])
    chans = [3] + [c for c, _ in plan]
    # (in, out, stride) for every encoder conv
    return [(chans[i], chans[i + 1], plan[i][1]) for i in range(len(plan))]


def _decoder_trunk(layers) -> nn.Sequential:
    # mirror every encoder layer except the first, which each head mirrors itself
    blocks = []
    for cin, cout, stride in reversed(layers[1:]):
        blocks += _deconv_block(cout, cin, stride)
    return nn.Sequential(*blocks)


class YShapedAutoencoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        layers = _layer_plan(config)
        enc = []
        for cin, cout, stride in layers:
            enc += _conv_block(cin, cout, stride)
        self.encoder = nn.Sequential(*enc)
        first_out = layers[0][1]
        self.seg_decoder = None
        self.rec_decoder = None
        if config.has_seg_branch:
            self.seg_decoder = nn.Sequential(
                _decoder_trunk(layers),
                *_deconv_block(first_out, first_out, 1),
                nn.Conv2d(first_out, 2, 1),
                nn.Softmax(dim=1),
            )
        if config.has_rec_branch:
            self.rec_decoder = nn.Sequential(
                _decoder_trunk(layers),
                nn.ConvTranspose2d(first_out, 3, 3, 1, 1),
                nn.Tanh(),
            )

    def encode(self, x: torch.Tensor) -> LatentCode:
        side = self.config.input_side
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, side, side):
            raise ValueError(f"expected batch of shape Bx3x{side}x{side}, got {tuple(x.shape)}")
        x = x.contiguous(memory_format=torch.channels_last)
        return LatentCode.split(self.encoder(x))

    def forward(self, x: torch.Tensor, labels: Optional[torch.Tensor] = None) -> ForwardOutput:
        """With ``labels`` the true half is kept (training); without, the half
        with the larger activation is kept (inference)."""
        latent = self.encode(x)
        if labels is not None:
            labels = torch.as_tensor(labels).long().reshape(-1)
            if labels.numel() != x.shape[0]:
                raise ValueError(f"got {labels.numel()} labels for a batch of {x.shape[0]}")
            keep = labels
        else:
            keep = predicted_class(latent)
        z = selection_block(latent, keep)
        seg = self.seg_decoder(z) if self.seg_decoder is not None else None
        rec = self.rec_decoder(z) if self.rec_decoder is not None else None
        return ForwardOutput(latent=latent, decoder_input=z, seg_map=seg, recon=rec)

    def decoder_parameters(self):
        for dec in (self.seg_decoder, self.rec_decoder):
            if dec is not None:
                yield from dec.parameters()


def _init_weights(model: nn.Module, gen: torch.Generator):
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                k = m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / math.sqrt(m.in_channels * k)
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.reset_running_stats()


def build_model(config: ModelConfig, seed: int = 0) -> YShapedAutoencoder:
    """Construct the autoencoder with deterministic weights for ``seed``."""
    if not config.runnable:
        raise UnimplementedVariantError(
            f"unimplemented: residual preprocessing (variant {config.variant.value} cannot be built)")
    model = YShapedAutoencoder(config)
    gen = torch.Generator().manual_seed(int(seed))
    _init_weights(model, gen)
    # NHWC is markedly faster for these convolutions on CPU
    return model.to(memory_format=torch.channels_last)
