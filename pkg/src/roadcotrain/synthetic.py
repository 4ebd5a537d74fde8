"""Synthetic two-view road scenes.

Each scene is a road trapezoid anchored at the bottom edge. The camera view
draws it with per-sequence colour palettes, lane markings, cast shadows and a
global illumination gain. The lidar view is an XYZ image of a ground plane
where off-road cells are raised, with random dropout of returns. Some
sequences have a flat verge beside the road that the lidar cannot tell from
asphalt but the camera can. Shadows and illumination only touch the camera;
dropout and the verge only touch the lidar.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import seeding
from .data import CATEGORIES, DatasetSplit, ExampleMeta, TwoViewExample, unlabeled_from_sequences
from .losses import LabelMask

CAMERA_HEIGHT = 1.73
FOCAL_PX = 20.0
MAX_RANGE = 60.0

# rough channel statistics of the lidar view under default parameters
LIDAR_MEAN = (8.0, 0.0, -1.2)
LIDAR_STD = (8.0, 6.0, 0.6)
CAMERA_MEAN = (0.4, 0.4, 0.4)
CAMERA_STD = (0.2, 0.2, 0.2)

_OFFROAD_FAMILIES = {
    "grass": (0.30, 0.48, 0.20),
    "soil": (0.50, 0.40, 0.28),
    "concrete": None,  # near the road colour, slightly brighter
    "foliage": (0.16, 0.30, 0.12),
    "brick": (0.55, 0.30, 0.25),
}


@dataclass(frozen=True)
class SceneParams:
    height: int = 24
    width: int = 32
    camera_noise: float = 0.04
    illumination_range: tuple[float, float] = (0.8, 1.25)
    # per-frame log-gain spread on top of the sequence illumination
    frame_gain_jitter: float = 0.1
    shadow_prob: float = 0.6
    lane_markings: bool = True
    lidar_noise: float = 0.03
    dropout_range: tuple[float, float] = (0.05, 0.35)
    offroad_height_range: tuple[float, float] = (0.08, 1.2)
    offroad_texture: float = 0.15
    palette_jitter: float = 0.06
    # per-sequence ground height offset and per-frame ground slope, both maxima
    ground_jitter: float = 0.08
    slope_jitter: float = 0.005
    # share of sequences with a flat verge along the road, and its widest extent
    verge_prob: float = 0.5
    verge_width_max: int = 3

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("scenes need at least 8x8 pixels")
        lo, hi = self.illumination_range
        if not 0 < lo <= hi:
            raise ValueError("illumination_range must satisfy 0 < lo <= hi")
        dlo, dhi = self.dropout_range
        if not 0 <= dlo <= dhi < 1:
            raise ValueError("dropout_range must satisfy 0 <= lo <= hi < 1")
        object.__setattr__(self, "illumination_range", (float(lo), float(hi)))
        object.__setattr__(self, "dropout_range", (float(dlo), float(dhi)))
        h = tuple(float(v) for v in self.offroad_height_range)
        object.__setattr__(self, "offroad_height_range", h)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("illumination_range", "dropout_range", "offroad_height_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneParams":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class SequenceStyle:
    """Appearance shared by all frames of one synthetic driving sequence."""

    category: str
    road_color: tuple[float, float, float]
    offroad_color: tuple[float, float, float]
    offroad_family: str
    illumination: float
    horizon: int
    ground_offset: float
    offroad_height: float
    verge_width: int = 0

    @classmethod
    def sample(cls, gen: np.random.Generator, params: SceneParams, category: str) -> "SequenceStyle":
        gray = gen.uniform(0.35, 0.55)
        tint = gen.normal(0.0, 0.02, size=3)
        road = np.clip(gray + tint, 0.05, 0.95)
        family = sorted(_OFFROAD_FAMILIES)[gen.integers(len(_OFFROAD_FAMILIES))]
        base = _OFFROAD_FAMILIES[family]
        if base is None:
            off = road + gen.uniform(0.12, 0.22)
        else:
            off = np.asarray(base) + gen.normal(0.0, params.palette_jitter, size=3)
        off = np.clip(off, 0.03, 0.97)
        # keep the palettes apart so noise-free scenes stay colour separable
        gap = np.abs(off - road).max()
        if gap < 0.08:
            off = np.clip(off + (0.08 - gap + 0.01), 0.03, 0.97)
        lo, hi = params.illumination_range
        illum = float(np.exp(gen.uniform(np.log(lo), np.log(hi))))
        hlo, hhi = params.offroad_height_range
        return cls(
            category=category,
            road_color=tuple(float(v) for v in road),
            offroad_color=tuple(float(v) for v in off),
            offroad_family=family,
            illumination=illum,
            horizon=int(gen.integers(2, max(3, params.height // 5) + 1)),
            ground_offset=float(gen.uniform(-params.ground_jitter, params.ground_jitter)),
            offroad_height=float(np.exp(gen.uniform(np.log(hlo), np.log(hhi)))),
            verge_width=int(gen.integers(1, params.verge_width_max + 1))
            if params.verge_width_max > 0 and gen.random() < params.verge_prob else 0,
        )


def _road_mask(gen: np.random.Generator, params: SceneParams, horizon: int, category: str) -> np.ndarray:
    h, w = params.height, params.width
    width_scale = {"UU": 0.8, "UM": 1.0, "UMM": 1.25}.get(category, 1.0)
    rows = np.arange(h)[:, None] + 0.5
    cols = np.arange(w)[None, :] + 0.5
    for _ in range(100):
        top = gen.uniform(horizon + 1, horizon + 1 + 0.45 * (h - horizon))
        centre_b = gen.uniform(0.3, 0.7) * w
        centre_t = centre_b + gen.uniform(-0.25, 0.25) * w
        half_b = gen.uniform(0.2, 0.38) * w * width_scale
        half_t = half_b * gen.uniform(0.15, 0.45)
        frac = np.clip((rows - top) / (h - top), 0.0, 1.0)
        centre = centre_t + (centre_b - centre_t) * frac
        half = half_t + (half_b - half_t) * frac
        mask = (rows >= top) & (np.abs(cols - centre) <= half)
        share = mask.mean()
        if 0.12 <= share <= 0.58:
            return mask
    return mask


def _verge(road: np.ndarray, width: int) -> np.ndarray:
    """Off-road pixels within ``width`` columns of the road in the same row."""
    near = np.zeros_like(road)
    for d in range(1, width + 1):
        near[:, d:] |= road[:, :-d]
        near[:, :-d] |= road[:, d:]
    return near & ~road


def _blocky(gen: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    gh, gw = -(-h // cell), -(-w // cell)
    coarse = gen.random((gh, gw))
    return np.kron(coarse, np.ones((cell, cell)))[:h, :w]


def _render(gen: np.random.Generator, params: SceneParams, style: SequenceStyle):
    h, w = params.height, params.width
    horizon = int(np.clip(style.horizon + gen.integers(-1, 2), 1, h // 3))
    road = _road_mask(gen, params, horizon, style.category)
    sky = np.arange(h)[:, None] < horizon
    sky = np.broadcast_to(sky, (h, w))

    # camera
    road_rgb = np.asarray(style.road_color)[:, None, None]
    off_rgb = np.asarray(style.offroad_color)[:, None, None]
    off_var = 1.0 + params.offroad_texture * (2.0 * _blocky(gen, h, w, 4) - 1.0)
    cam = np.where(road[None], road_rgb, off_rgb * off_var[None])
    if params.lane_markings and style.category in ("UM", "UMM"):
        rows = np.arange(h)[:, None]
        lines = [0.5] if style.category == "UM" else [0.33, 0.67]
        for frac in lines:
            lane = np.zeros((h, w), dtype=bool)
            for v in range(h):
                idx = np.flatnonzero(road[v])
                if idx.size >= 4:
                    lane[v, idx[0] + int(round(frac * (idx.size - 1)))] = True
            dashed = lane & ((rows // 2) % 2 == 0)
            cam = np.where(dashed[None], 0.9, cam)
    cam = np.where(sky[None], np.array([0.55, 0.7, 0.9])[:, None, None], cam)
    gain = style.illumination * np.exp(gen.uniform(-params.frame_gain_jitter, params.frame_gain_jitter))
    shade = np.ones((h, w))
    if gen.random() < params.shadow_prob:
        for _ in range(int(gen.integers(1, 4))):
            y0 = int(gen.integers(horizon, h - 2))
            x0 = int(gen.integers(0, w - 2))
            y1 = min(h, y0 + int(gen.integers(3, h // 2 + 1)))
            x1 = min(w, x0 + int(gen.integers(3, w // 2 + 1)))
            shade[y0:y1, x0:x1] *= gen.uniform(0.35, 0.65)
    cam = cam * gain * shade[None]
    if params.camera_noise > 0:
        cam = cam + gen.normal(0.0, params.camera_noise, size=cam.shape)
    cam = np.clip(cam, 0.0, 1.0)

    # lidar: ground plane seen from the camera, off-road cells raised
    rows = np.arange(h)[:, None] + 0.5
    cols = np.arange(w)[None, :] + 0.5
    below = np.maximum(rows - horizon, 0.5)
    x = np.broadcast_to(np.minimum(CAMERA_HEIGHT * FOCAL_PX / below, MAX_RANGE), (h, w))
    y = (w / 2.0 - cols) * x / FOCAL_PX
    slope = gen.uniform(-params.slope_jitter, params.slope_jitter)
    ground = -CAMERA_HEIGHT + style.ground_offset + slope * x
    heights = style.offroad_height * (0.5 + 0.5 * _blocky(gen, h, w, int(gen.integers(2, 6))))
    flat = road | _verge(road, style.verge_width)
    z = ground + np.where(flat, 0.0, heights)
    n = params.lidar_noise
    if n > 0:
        x = x + gen.normal(0.0, n, size=(h, w)) * (1 + 0.05 * x)
        y = y + gen.normal(0.0, n, size=(h, w))
        z = z + gen.normal(0.0, n, size=(h, w))
    dlo, dhi = params.dropout_range
    rate = gen.uniform(dlo, dhi) if dhi > 0 else 0.0
    coverage = (~sky) & (gen.random((h, w)) >= rate)
    lidar = np.where(coverage[None], np.stack([x, y, z]), 0.0)

    label = LabelMask.all_valid(road.astype(np.int64))
    return cam, lidar, coverage.astype(np.float64), label


def synth_scene(seed: int, params: SceneParams = SceneParams(), style: SequenceStyle | None = None,
                category: str = "UM", sequence_id: str = "synthetic", frame_index: int = 0) -> TwoViewExample:
    """Render one labeled scene. Identical arguments give identical output."""
    if style is None:
        style = SequenceStyle.sample(seeding.rng(seed, "style"), params, category)
    cam, lidar, coverage, label = _render(seeding.rng(seed, "frame"), params, style)
    return TwoViewExample(cam, lidar, label, sequence_id, frame_index, style.category, coverage)


@dataclass
class SyntheticWorld:
    """Deterministic catalogue of synthetic driving sequences.

    Frames are rendered on demand from ``(seed, sequence, frame)``. Each
    sequence holds ``frames_per_sequence`` frames at ``rate_hz``. Labeled
    sequences carry their labeled frames near the start, so the rest of the
    sequence survives the exclusion window and joins the unlabeled pool.
    """

    seed: int
    params: SceneParams = field(default_factory=SceneParams)
    sequences_per_category: int = 12
    labeled_per_sequence: int = 10
    frames_per_sequence: int = 600
    unlabeled_sequences: int = 12
    rate_hz: float = 10.0
    labeled_spacing_s: float = 1.0

    def __post_init__(self):
        self._styles: dict[str, SequenceStyle] = {}
        self._cats: dict[str, str] = {}
        for c in CATEGORIES:
            for i in range(self.sequences_per_category):
                self._cats[f"{c.lower()}_seq{i:03d}"] = c
        for i in range(self.unlabeled_sequences):
            c = CATEGORIES[i % len(CATEGORIES)]
            self._cats[f"raw_seq{i:03d}"] = c

    def sequence_ids(self) -> list[str]:
        return sorted(self._cats)

    def category(self, sequence_id: str) -> str:
        return self._cats[sequence_id]

    def style(self, sequence_id: str) -> SequenceStyle:
        if sequence_id not in self._styles:
            gen = seeding.rng(self.seed, "style", sequence_id)
            self._styles[sequence_id] = SequenceStyle.sample(gen, self.params, self._cats[sequence_id])
        return self._styles[sequence_id]

    def timestamps(self, sequence_id: str) -> list[float]:
        return [i / self.rate_hz for i in range(self.frames_per_sequence)]

    def labeled_metadata(self) -> list[ExampleMeta]:
        """Labeled frames: a short burst at the start of every labeled sequence."""
        out = []
        for sid in self.sequence_ids():
            if sid.startswith("raw_"):
                continue
            cat = self._cats[sid]
            for k in range(self.labeled_per_sequence):
                f = int(round((k + 0.5) * self.labeled_spacing_s * self.rate_hz))
                out.append(ExampleMeta(sid, f, cat, f / self.rate_hz))
        return out

    def unlabeled_metadata(self, window_s: float = 10.0, keep_every: int = 5,
                           limit: int | None = None) -> list[ExampleMeta]:
        seqs = {sid: self.timestamps(sid) for sid in self.sequence_ids()}
        pool = unlabeled_from_sequences(seqs, self.labeled_metadata(), window_s, keep_every, self._cats)
        if limit is not None and limit < len(pool):
            gen = seeding.rng(self.seed, "unlabeled-subsample")
            keep = sorted(gen.choice(len(pool), limit, replace=False))
            pool = [pool[i] for i in keep]
        return pool

    def render(self, item, labeled: bool = True) -> TwoViewExample:
        sid, frame = item.sequence_id, int(item.frame_index)
        gen = seeding.rng(self.seed, "frame", sid, frame)
        cam, lidar, coverage, label = _render(gen, self.params, self.style(sid))
        return TwoViewExample(cam, lidar, label if labeled else None, sid, frame, self._cats[sid], coverage)

    def lookup(self, sequence_id: str, frame_index: int) -> ExampleMeta:
        return ExampleMeta(sequence_id, frame_index, self._cats[sequence_id], frame_index / self.rate_hz)


def synth_dataset(seed: int, n_labeled: int, n_unlabeled: int, n_validation: int,
                  params: SceneParams = SceneParams()) -> DatasetSplit:
    """A single rendered split with disjoint train and validation sequences."""
    if n_labeled < 1 or n_validation < 1 or n_unlabeled < 0:
        raise ValueError("n_labeled and n_validation must be >= 1, n_unlabeled >= 0")
    per_seq = 8

    def examples(prefix: str, count: int, labeled: bool) -> list[TwoViewExample]:
        out = []
        for k in range(count):
            seq = k // per_seq
            cat = CATEGORIES[seq % len(CATEGORIES)]
            sid = f"{prefix}_seq{seq:03d}"
            style = SequenceStyle.sample(seeding.rng(seed, "style", sid), params, cat)
            ex = synth_scene(seeding.derive_seed(seed, sid, k), params, style, cat, sid, k)
            out.append(ex if labeled else ex.without_label())
        return out

    train = examples("train", n_labeled, True)
    val = examples("val", n_validation, True)
    unl = examples("unl", n_unlabeled, False)
    return DatasetSplit(0, train, val, unl, {n_labeled: list(range(n_labeled))})
