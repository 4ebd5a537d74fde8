"""Lidar to camera-plane XYZ images, KITTI file readers, and crop/pad geometry."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numgrad import DimensionError, FormatError

VELODYNE_RECORD_BYTES = 16
CALIB_FIELDS = ("P2", "R0_rect", "Tr_velo_to_cam")


def _homogeneous(mat, name: str) -> np.ndarray:
    m = np.asarray(mat, dtype=np.float64)
    if m.shape == (3, 3):
        out = np.eye(4)
        out[:3, :3] = m
        return out
    if m.shape == (3, 4):
        return np.vstack([m, [0.0, 0.0, 0.0, 1.0]])
    if m.shape == (4, 4):
        return m.copy()
    raise DimensionError(f"{name} must be 3x3, 3x4 or 4x4, got {list(m.shape)}")


@dataclass(frozen=True, eq=False)
class Calibration:
    """``P`` (3x4) projects rectified camera coordinates; ``R`` rectifies; ``T`` maps lidar to camera.

    ``R`` and ``T`` are promoted to 4x4 homogeneous form on construction.
    """

    P: np.ndarray
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        if P.shape != (3, 4):
            raise DimensionError(f"P must be 3x4, got {list(P.shape)}")
        R = _homogeneous(self.R, "R")
        T = _homogeneous(self.T, "T")
        for name, m in (("P", P), ("R", R), ("T", T)):
            if not np.isfinite(m).all():
                raise ValueError(f"calibration matrix {name} has non-finite entries")
            m.flags.writeable = False
        for name, m in (("R", R), ("T", T)):
            if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
                raise ValueError(f"calibration matrix {name} must have bottom row (0, 0, 0, 1)")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @property
    def matrix(self) -> np.ndarray:
        """The composed 3x4 map ``P @ R @ T``."""
        return self.P @ (self.R @ self.T)

    @classmethod
    def identity(cls, P) -> "Calibration":
        return cls(P, np.eye(4), np.eye(4))


@dataclass(frozen=True, eq=False)
class XyzImage:
    channels: np.ndarray  # [3, H, W]
    coverage: np.ndarray  # [H, W], 1 where a point landed

    @property
    def shape(self) -> tuple[int, int]:
        return self.coverage.shape


def project_point(p, calib: Calibration) -> tuple[float, float, float] | None:
    """Pixel coordinates and depth scale of one point.

    ``p`` is ``(x, y, z)`` or homogeneous ``(x, y, z, 1)``. Returns
    ``(u, v, alpha)``, or ``None`` for a degenerate point with ``alpha == 0``.
    A negative ``alpha`` is returned as is; such points lie behind the camera.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 3:
        p = np.append(p, 1.0)
    if p.size != 4:
        raise DimensionError(f"point must have 3 or 4 coordinates, got {p.size}")
    q = calib.P @ (calib.R @ (calib.T @ p))
    alpha = float(q[2])
    if alpha == 0.0:
        return None
    return float(q[0]) / alpha, float(q[1]) / alpha, alpha


def _project_cloud(points: np.ndarray, calib: Calibration) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # elementwise so each point's result is independent of its position in the array
    m = calib.matrix
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    q = [m[i, 0] * x + m[i, 1] * y + m[i, 2] * z + m[i, 3] for i in range(3)]
    alpha = q[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return q[0] / alpha, q[1] / alpha, alpha


def pixel_index(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest pixel centre, halves rounded up."""
    return np.floor(u + 0.5).astype(np.int64), np.floor(v + 0.5).astype(np.int64)


def build_xyz_image(points, calib: Calibration, width: int, height: int) -> XyzImage:
    """Scatter a point cloud into X, Y, Z images.

    Points with ``alpha <= 0`` or landing outside the image are dropped. When
    several points share a pixel the one with the smallest ``alpha`` wins;
    exact ties go to the lexicographically smallest ``(x, y, z)``. The result
    does not depend on point order.
    """
    if width < 1 or height < 1:
        raise DimensionError(f"image size must be positive, got {width}x{height}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise DimensionError(f"points must be [N,3] (or [N,4] homogeneous), got {list(pts.shape)}")
    pts = pts[:, :3]
    if not np.isfinite(pts).all():
        raise ValueError("point cloud has non-finite coordinates")
    channels = np.zeros((3, height, width))
    coverage = np.zeros((height, width))
    if len(pts):
        u, v, alpha = _project_cloud(pts, calib)
        keep = alpha > 0
        # clamp before the integer cast; anything clamped lands outside the image
        u = np.clip(np.where(keep, u, -1.0), -1.0, width + 1.0)
        v = np.clip(np.where(keep, v, -1.0), -1.0, height + 1.0)
        col, row = pixel_index(u, v)
        keep &= (col >= 0) & (col < width) & (row >= 0) & (row < height)
        idx = np.flatnonzero(keep)
        if idx.size:
            flat = row[idx] * width + col[idx]
            sel = pts[idx]
            order = np.lexsort((sel[:, 2], sel[:, 1], sel[:, 0], alpha[idx], flat))
            flat_sorted = flat[order]
            first = np.ones(order.size, dtype=bool)
            first[1:] = flat_sorted[1:] != flat_sorted[:-1]
            winners = order[first]
            r, c = row[idx][winners], col[idx][winners]
            channels[:, r, c] = sel[winners].T
            coverage[r, c] = 1.0
    return XyzImage(channels, coverage)


# ---------------------------------------------------------------------------
# geometry

def downsample_crop(image, factor: int, target_w: int, target_h: int, mode: str = "mean") -> np.ndarray:
    """Downsample by ``factor`` then keep the bottom ``target_h`` rows and the
    centred ``target_w`` columns.

    ``mode="mean"`` averages ``factor x factor`` blocks (camera images);
    ``mode="stride"`` takes the top-left pixel of each block (XYZ images, where
    averaging would invent points between surfaces).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"image must be [C,H,W], got {list(img.shape)}")
    if factor < 1:
        raise DimensionError("factor must be >= 1")
    c, h, w = img.shape
    hh, ww = h // factor, w // factor
    if hh < target_h or ww < target_w:
        raise DimensionError(f"{w}x{h} downsampled by {factor} is {ww}x{hh}, smaller than {target_w}x{target_h}")
    if mode == "mean":
        small = img[:, :hh * factor, :ww * factor].reshape(c, hh, factor, ww, factor).mean(axis=(2, 4))
    elif mode == "stride":
        small = img[:, :hh * factor:factor, :ww * factor:factor]
    else:
        raise ValueError(f"unknown mode {mode!r}; expected 'mean' or 'stride'")
    left = (ww - target_w) // 2
    return np.ascontiguousarray(small[:, hh - target_h:, left:left + target_w])


def zero_pad(image, target_w: int, target_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Place the image top-left in a zero canvas; the mask is True on padding."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"image must be [C,H,W], got {list(img.shape)}")
    c, h, w = img.shape
    if target_h < h or target_w < w:
        raise DimensionError(f"cannot pad {w}x{h} to the smaller {target_w}x{target_h}")
    out = np.zeros((c, target_h, target_w))
    out[:, :h, :w] = img
    pad = np.ones((target_h, target_w), dtype=bool)
    pad[:h, :w] = False
    return out, pad


# ---------------------------------------------------------------------------
# files

def read_velodyne(path) -> np.ndarray:
    """``[N,3]`` float64 points from a KITTI scan (float32 x, y, z, intensity records)."""
    blob = Path(path).read_bytes()
    if len(blob) % VELODYNE_RECORD_BYTES:
        raise FormatError(f"{path}: {len(blob)} bytes is not a whole number of "
                          f"{VELODYNE_RECORD_BYTES}-byte records (float32 x, y, z, intensity)")
    pts = np.frombuffer(blob, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    if not np.isfinite(pts).all():
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise FormatError(f"{path}: record {bad} has non-finite coordinates")
    return pts


def write_velodyne(path, points, intensity=None) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inten = np.zeros(len(pts)) if intensity is None else np.asarray(intensity, dtype=np.float64)
    Path(path).write_bytes(np.column_stack([pts, inten]).astype("<f4").tobytes())


_CALIB_SHAPES = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def read_calib(path) -> Calibration:
    """Parse a KITTI calibration file; only ``P2``, ``R0_rect`` and ``Tr_velo_to_cam`` are used."""
    rows: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        name, sep, rest = line.partition(":")
        if sep:
            rows[name.strip()] = rest
    mats = {}
    for name, shape in _CALIB_SHAPES.items():
        if name not in rows:
            raise FormatError(f"{path}: missing calibration field {name}")
        try:
            vals = [float(tok) for tok in rows[name].split()]
        except ValueError:
            raise FormatError(f"{path}: field {name} has a non-numeric entry") from None
        if len(vals) != shape[0] * shape[1]:
            raise FormatError(f"{path}: field {name} has {len(vals)} values, expected {shape[0] * shape[1]}")
        mats[name] = np.array(vals).reshape(shape)
    try:
        return Calibration(mats["P2"], mats["R0_rect"], mats["Tr_velo_to_cam"])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_calib(path, calib: Calibration) -> None:
    fmt = lambda m: " ".join(repr(float(v)) for v in np.asarray(m).ravel())  # noqa: E731
    Path(path).write_text(f"P2: {fmt(calib.P)}\nR0_rect: {fmt(calib.R[:3, :3])}\n"
                          f"Tr_velo_to_cam: {fmt(calib.T[:3, :])}\n")


def visualization(xyz: XyzImage) -> np.ndarray:
    """The three channels min-max scaled to 8 bits and stacked vertically, ``[3H, W]``."""
    out = []
    for ch in xyz.channels:
        lo, hi = float(ch.min()), float(ch.max())
        scaled = np.zeros_like(ch) if hi == lo else (ch - lo) / (hi - lo) * 255.0
        out.append(np.floor(scaled + 0.5).astype(np.uint8))
    return np.vstack(out)


def write_pgm(path, gray: np.ndarray) -> None:
    img = np.asarray(gray)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DimensionError("PGM output needs a 2-D uint8 array")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())
