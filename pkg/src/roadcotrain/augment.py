"""Training-time augmentation: rotation about the image centre and camera colour jitter."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .data import TwoViewExample
from .losses import LabelMask

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentParams:
    rotation_range_deg: tuple[float, float] = (-20.0, 20.0)
    brightness: tuple[float, float] = (0.8, 1.25)
    contrast: tuple[float, float] = (0.8, 1.25)
    saturation: tuple[float, float] = (0.8, 1.25)
    hue: tuple[float, float] = (-0.05, 0.05)
    enabled: bool = True

    def __post_init__(self):
        for name in ("rotation_range_deg", "brightness", "contrast", "saturation", "hue"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} must be a finite (lo, hi) pair with lo <= hi")
            object.__setattr__(self, name, (lo, hi))
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name)[0] < 0:
                raise ValueError(f"{name} factors must be nonnegative")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _source_coords(h: int, w: int, angle_deg: float) -> tuple[np.ndarray, np.ndarray]:
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: the output pixel samples the input rotated by -theta
    sx = c * dx + s * dy + cx
    sy = -s * dx + c * dy + cy
    return sy, sx


def rotation_source(h: int, w: int, angle_deg: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest source pixel (row, col) per output pixel and whether it exists."""
    sy, sx = _source_coords(h, w, angle_deg)
    ry, rx = np.rint(sy).astype(np.int64), np.rint(sx).astype(np.int64)
    inside = (ry >= 0) & (ry < h) & (rx >= 0) & (rx < w)
    return np.clip(ry, 0, h - 1), np.clip(rx, 0, w - 1), inside


def _nearest(img: np.ndarray, ry, rx, inside) -> np.ndarray:
    return np.where(inside, img[..., ry, rx], 0)


def _bilinear(img: np.ndarray, sy, sx, inside) -> np.ndarray:
    h, w = img.shape[-2:]
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)
    fx = np.clip(sx - x0, 0.0, 1.0)
    top = img[..., y0, x0] * (1 - fx) + img[..., y0, x1] * fx
    bot = img[..., y1, x0] * (1 - fx) + img[..., y1, x1] * fx
    return np.where(inside, top * (1 - fy) + bot * fy, 0.0)


def random_rotate(example: TwoViewExample, angle_deg: float) -> TwoViewExample:
    """Rotate both views and the label by the same angle about the image centre.

    Camera uses bilinear sampling; lidar, coverage and label use nearest
    neighbour so no 3-D coordinates are blended. Output pixels without a source
    are zero and marked invalid in the label.
    """
    if angle_deg == 0:
        return example
    h, w = example.size
    sy, sx = _source_coords(h, w, angle_deg)
    ry, rx, inside = rotation_source(h, w, angle_deg)
    camera = _bilinear(example.camera, sy, sx, inside)
    lidar = _nearest(example.lidar, ry, rx, inside).astype(np.float64)
    coverage = None
    if example.lidar_coverage is not None:
        coverage = _nearest(example.lidar_coverage, ry, rx, inside).astype(np.float64)
    label = None
    if example.label is not None:
        label = LabelMask(_nearest(example.label.classes, ry, rx, inside),
                          _nearest(example.label.valid, ry, rx, inside).astype(bool) & inside)
    return TwoViewExample(camera, lidar, label, example.sequence_id, example.frame_index,
                          example.category, coverage)


def color_jitter(camera: np.ndarray, factors: tuple[float, float, float, float]) -> np.ndarray:
    """Brightness, contrast, saturation and hue adjustment, in that order.

    ``factors = (brightness, contrast, saturation, hue_shift)``; the hue shift
    is a fraction of a full turn. Each stage clamps to ``[0, 1]``.
    """
    b, c, s, hue = (float(f) for f in factors)
    img = np.clip(np.asarray(camera, dtype=np.float64) * b, 0.0, 1.0)
    if c != 1.0:
        mean_lum = float(np.tensordot(LUMA, img, axes=(0, 0)).mean())
        img = np.clip(mean_lum + c * (img - mean_lum), 0.0, 1.0)
    if s != 1.0:
        lum = np.tensordot(LUMA, img, axes=(0, 0))[None]
        img = np.clip(lum + s * (img - lum), 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(np.moveaxis(img, 0, -1))
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        img = np.clip(np.moveaxis(hsv_to_rgb(hsv), -1, 0), 0.0, 1.0)
    return img


def sample_augmentation(gen: np.random.Generator, params: AugmentParams) -> tuple[float, tuple[float, ...]]:
    """Draw (angle, jitter factors). Always consumes five uniforms, in a fixed order."""
    draws = gen.random(5)
    lerp = lambda rng, u: rng[0] + (rng[1] - rng[0]) * u  # noqa: E731
    angle = lerp(params.rotation_range_deg, draws[0])
    factors = (lerp(params.brightness, draws[1]), lerp(params.contrast, draws[2]),
               lerp(params.saturation, draws[3]), lerp(params.hue, draws[4]))
    return angle, factors


def augment(example: TwoViewExample, gen: np.random.Generator, params: AugmentParams) -> TwoViewExample:
    if not params.enabled:
        return example
    angle, factors = sample_augmentation(gen, params)
    rotated = random_rotate(example, angle)
    return TwoViewExample(color_jitter(rotated.camera, factors), rotated.lidar, rotated.label,
                          rotated.sequence_id, rotated.frame_index, rotated.category, rotated.lidar_coverage)
