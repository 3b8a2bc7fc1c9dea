"""Procedural face-like frames with forged regions and exact ground-truth masks.

Fake video ``v`` is real video ``v`` with a re-textured region blended in, so
every fake frame has a pixel-aligned real source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .data import IMAGE_SIDE, ImageSample

ATTACKS = ("smooth_blob", "rectangle", "polygon")
_ATTACK_CODE = {a: i + 1 for i, a in enumerate(ATTACKS)}
_FACE_STREAM = 0xFACE

REAL_NOISE = 0.02
FAKE_NOISE = 0.04
FEATHER = 3.0


@dataclass
class _Face:
    cx: float
    cy: float
    ax: float  # horizontal semi-axis
    ay: float
    base: np.ndarray  # (3,) skin colour
    background: np.ndarray  # 3xHxW smooth field


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def _video_face(seed: int, video: int, size: int) -> _Face:
    rng = np.random.default_rng([seed, _FACE_STREAM, video])
    s = size / IMAGE_SIDE
    yy, xx = _grid(size)
    bg = np.empty((3, size, size))
    for c in range(3):
        level = rng.uniform(0.2, 0.8)
        field = np.zeros((size, size))
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 2.0, size=2) * 2 * np.pi / size
            field += rng.uniform(0.03, 0.08) * np.cos(fx * xx + fy * yy + rng.uniform(0, 2 * np.pi))
        bg[c] = level + field
    return _Face(
        cx=size / 2 + rng.uniform(-10, 10) * s,
        cy=size / 2 + rng.uniform(-10, 10) * s,
        ax=rng.uniform(70, 90) * s,
        ay=rng.uniform(90, 110) * s,
        base=rng.uniform(0.35, 0.65, size=3),
        background=bg,
    )


def _frame_offset(seed, video, frame, size):
    rng = np.random.default_rng([seed, _FACE_STREAM, video, frame, 1])
    return rng.uniform(-3, 3, size=2) * size / IMAGE_SIDE


def _ellipse(yy, xx, cx, cy, ax, ay):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2


def _render_real(face: _Face, dx, dy, noise_rng, size):
    """Return (smooth image, noisy image) for one frame, both 3xHxW float64."""
    yy, xx = _grid(size)
    cx, cy = face.cx + dx, face.cy + dy
    r = _ellipse(yy, xx, cx, cy, face.ax, face.ay)
    alpha = np.clip((1.0 - r) * 8.0, 0.0, 1.0)  # soft face edge
    shade = 0.06 * (yy - cy) / face.ay  # top-lit
    skin = face.base[:, None, None] - shade[None]
    smooth = (1 - alpha) * face.background + alpha * skin
    # eyes and mouth
    feat = np.zeros((size, size))
    for ex in (-0.38, 0.38):
        feat = np.maximum(feat, _ellipse(yy, xx, cx + ex * face.ax, cy - 0.2 * face.ay,
                                         0.14 * face.ax, 0.07 * face.ay) < 1)
    feat = np.maximum(feat, _ellipse(yy, xx, cx, cy + 0.45 * face.ay, 0.3 * face.ax, 0.07 * face.ay) < 1)
    smooth = smooth - 0.15 * feat[None]
    noise = np.clip(noise_rng.normal(0.0, REAL_NOISE, size=smooth.shape), -3 * REAL_NOISE, 3 * REAL_NOISE)
    return smooth, _quantize(smooth + noise)


def _quantize(x):
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def _region(attack: str, seed: int, video: int, face: _Face, size: int):
    """Binary region support in face-centred coordinates (offset applied later)."""
    rng = np.random.default_rng([seed, _ATTACK_CODE[attack], video])
    yy, xx = _grid(size)
    cx, cy, ax, ay = face.cx, face.cy, face.ax, face.ay
    inside_face = _ellipse(yy, xx, cx, cy, ax, ay) <= 1.0
    if attack == "smooth_blob":
        region = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(2, 5)):
            ox, oy = rng.uniform(-0.35, 0.35, size=2)
            sx, sy = rng.uniform(0.35, 0.7, size=2)
            region |= _ellipse(yy, xx, cx + ox * ax, cy + oy * ay, sx * ax, sy * ay) <= 1.0
        return region & inside_face
    if attack == "rectangle":
        frac = rng.uniform(0.10, 0.30)
        aspect = rng.uniform(0.6, 1.6)
        area = frac * np.pi * ax * ay
        w, h = np.sqrt(area * aspect), np.sqrt(area / aspect)
        ox, oy = rng.uniform(-0.2, 0.2, size=2)
        x0, y0 = cx + ox * ax - w / 2, cy + oy * ay - h / 2
        return (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
    if attack == "polygon":
        n = int(rng.integers(5, 9))
        step = 2 * np.pi / n
        angles = np.arange(n) * step + rng.uniform(-0.3, 0.3, size=n) * step + rng.uniform(0, 2 * np.pi)
        radii = rng.uniform(0.45, 0.9, size=n)
        pts = np.stack([cx + radii * ax * np.cos(angles), cy + radii * ay * np.sin(angles)], axis=1)
        hull = pts[ConvexHull(pts).vertices]  # counter-clockwise
        region = np.ones((size, size), dtype=bool)
        for (x1, y1), (x2, y2) in zip(hull, np.roll(hull, -1, axis=0)):
            region &= (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1) >= 0
        return region
    raise ValueError(f"unknown attack {attack!r}")


def _shift_region(region, dx, dy):
    return ndimage.shift(region.astype(np.uint8), (dy, dx), order=0, mode="constant", cval=0).astype(bool)


def blend_weight(region: np.ndarray) -> np.ndarray:
    """Feathered alpha: a linear ramp over the 3 pixels straddling the region
    border (two outside, one inside). Binarizing at 0.5 recovers the region."""
    if not region.any():
        return np.zeros(region.shape)
    signed = ndimage.distance_transform_edt(region) - ndimage.distance_transform_edt(~region)
    return np.clip((signed + FEATHER - 1) / FEATHER, 0.0, 1.0)


def _forge(real_smooth, real, face: _Face, region, seed, video, frame, attack):
    rng = np.random.default_rng([seed, _ATTACK_CODE[attack], video, frame])
    vrng = np.random.default_rng([seed, _ATTACK_CODE[attack], video, 99])
    channel = int(vrng.integers(0, 3))
    magnitude = vrng.uniform(0.15, 0.25)
    shift = np.zeros(3)
    shift[channel] = magnitude if face.base[channel] < 0.5 else -magnitude
    noise = np.clip(rng.normal(0.0, FAKE_NOISE, size=real.shape), -1.5 * FAKE_NOISE, 1.5 * FAKE_NOISE)
    texture = real_smooth + shift[:, None, None] + noise
    w = blend_weight(region)
    fake = _quantize((1 - w) * real + w * texture)
    fake = np.where(w > 0, fake, real)
    return fake, (w >= 0.5)


def synth_frame(seed: int, video: int, frame: int, attack: str | None, size: int = IMAGE_SIDE):
    """Render one frame of video ``video``; ``attack=None`` gives the real frame.

    Returns (pixels float32 3xHxW, mask uint8 1xHxW).
    """
    face = _video_face(seed, video, size)
    dx, dy = _frame_offset(seed, video, frame, size)
    noise_rng = np.random.default_rng([seed, _FACE_STREAM, video, frame, 2])
    smooth, real = _render_real(face, dx, dy, noise_rng, size)
    if attack is None:
        return real.astype(np.float32), np.zeros((1, size, size), dtype=np.uint8)
    region = _shift_region(_region(attack, seed, video, face, size), dx, dy)
    fake, mask = _forge(smooth, real, face, region, seed, video, frame, attack)
    return fake.astype(np.float32), mask.astype(np.uint8)[None]


def generate_synthetic(seed: int, n_videos: int, frames: int, attack: str,
                       first_video: int = 0, size: int = IMAGE_SIDE) -> list[ImageSample]:
    """Real and fake videos ``first_video .. first_video + n_videos - 1``,
    ``frames`` frames each, sorted by (video_id, frame_index)."""
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}; expected one of {ATTACKS}")
    if n_videos < 1 or frames < 1:
        raise ValueError("n_videos and frames must be >= 1")
    samples = []
    for v in range(first_video, first_video + n_videos):
        for f in range(frames):
            pix, mask = synth_frame(seed, v, f, None, size)
            samples.append(ImageSample(pix, 0, mask, f"real_{v:04d}", f, "none"))
            pix, mask = synth_frame(seed, v, f, attack, size)
            samples.append(ImageSample(pix, 1, mask, f"fake_{v:04d}", f, attack))
    return sorted(samples, key=lambda s: (s.video_id, s.frame_index))


def synthetic_corpus(seed: int, attack: str, train_videos: int, val_videos: int, test_videos: int,
                     frames: int, eval_frames: int | None = None, size: int = IMAGE_SIDE,
                     first_video: int = 0) -> dict[str, list[ImageSample]]:
    """Disjoint train/val/test video ranges from one generator seed."""
    eval_frames = frames if eval_frames is None else eval_frames
    out = {}
    start = first_video
    for name, n, f in (("train", train_videos, frames), ("val", val_videos, eval_frames),
                       ("test", test_videos, eval_frames)):
        out[name] = generate_synthetic(seed, n, f, attack, first_video=start, size=size) if n > 0 else []
        start += n
    return out
