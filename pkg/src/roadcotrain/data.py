"""Two-view examples, the nested-subset split protocol, and the temporal exclusion filter."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import seeding
from .losses import LabelMask

CATEGORIES = ("UM", "UMM", "UU")
VIEWS = ("lidar", "camera")
KITTI_SUBSET_SIZES = (9, 18, 36, 72, 108, 144)
DESK_SUBSET_SIZES = (4, 8, 16, 32, 64, 128)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ExampleMeta:
    """Where a frame lives: its driving sequence, index, timestamp and category."""

    sequence_id: str
    frame_index: int
    category: str
    timestamp: float = 0.0

    @property
    def key(self) -> tuple[str, int]:
        return (self.sequence_id, self.frame_index)


@dataclass(frozen=True, eq=False)
class TwoViewExample:
    camera: np.ndarray
    lidar: np.ndarray
    label: LabelMask | None
    sequence_id: str
    frame_index: int
    category: str
    lidar_coverage: np.ndarray | None = None

    def __post_init__(self):
        cam = np.asarray(self.camera, dtype=np.float64)
        lid = np.asarray(self.lidar, dtype=np.float64)
        if cam.ndim != 3 or cam.shape[0] != 3 or lid.shape != cam.shape:
            raise ValueError(f"camera {cam.shape} and lidar {lid.shape} must both be [3,H,W]")
        if self.label is not None and self.label.shape != cam.shape[1:]:
            raise ValueError("label does not match view size")
        for arr in (cam, lid):
            arr.flags.writeable = False
        object.__setattr__(self, "camera", cam)
        object.__setattr__(self, "lidar", lid)

    @property
    def key(self) -> tuple[str, int]:
        return (self.sequence_id, self.frame_index)

    @property
    def size(self) -> tuple[int, int]:
        return self.camera.shape[1], self.camera.shape[2]

    def view(self, name: str) -> np.ndarray:
        if name == "camera":
            return self.camera
        if name == "lidar":
            return self.lidar
        raise ValueError(f"unknown view {name!r}; expected one of {VIEWS}")

    def without_label(self) -> "TwoViewExample":
        return TwoViewExample(self.camera, self.lidar, None, self.sequence_id, self.frame_index,
                              self.category, self.lidar_coverage)

    def with_label(self, label: LabelMask) -> "TwoViewExample":
        return TwoViewExample(self.camera, self.lidar, label, self.sequence_id, self.frame_index,
                              self.category, self.lidar_coverage)


@dataclass
class DatasetSplit:
    """One ``{T_i, V_i, U}`` set plus the nested index chain over ``T_i``.

    Items are :class:`ExampleMeta` before rendering and :class:`TwoViewExample`
    after :func:`materialize`.
    """

    id: int
    train: list
    validation: list
    unlabeled: list
    nested_subsets: dict[int, list[int]] = field(default_factory=dict)

    def subset(self, size: int) -> list:
        if size not in self.nested_subsets:
            raise KeyError(f"split {self.id} has no subset of size {size}")
        return [self.train[i] for i in self.nested_subsets[size]]

    def to_manifest(self) -> dict:
        keys = lambda items: [[it.sequence_id, int(it.frame_index)] for it in items]  # noqa: E731
        return {
            "id": self.id,
            "train": keys(self.train),
            "validation": keys(self.validation),
            "unlabeled": keys(self.unlabeled),
            "nested_subsets": {str(k): list(map(int, v)) for k, v in sorted(self.nested_subsets.items())},
        }


def _quota(total: int, categories: Sequence[str]) -> dict[str, int]:
    base, extra = divmod(total, len(categories))
    return {c: base + (1 if i < extra else 0) for i, c in enumerate(categories)}


def _partition_sequences(seqs: list[str], frames: dict[str, list], need_train: int, need_val: int,
                         gen: np.random.Generator, attempts: int = 200) -> tuple[list[str], list[str]]:
    for _ in range(attempts):
        order = [seqs[i] for i in gen.permutation(len(seqs))]
        counts = np.cumsum([len(frames[s]) for s in order])
        total = int(counts[-1])
        for cut in range(1, len(order)):
            if counts[cut - 1] >= need_train and total - counts[cut - 1] >= need_val:
                return order[:cut], order[cut:]
    raise SplitError(f"cannot place {need_train} train and {need_val} validation frames "
                     f"on disjoint sequences ({len(seqs)} sequences, {sum(len(v) for v in frames.values())} frames)")


def generate_splits(labeled: Sequence[ExampleMeta], num_splits: int, train_size: int, val_size: int,
                    subset_sizes: Sequence[int], seed: int, unlabeled: Sequence | None = None) -> list[DatasetSplit]:
    """Category-balanced, sequence-disjoint train/validation splits with nested subsets.

    Per split and category, the category's sequences are shuffled and cut into a
    train side and a validation side; frames are then sampled without
    replacement on each side. The subsets of ``T_i`` are prefixes of one random
    permutation, so they nest by construction.
    """
    sizes = sorted(set(int(s) for s in subset_sizes))
    if not sizes or sizes[0] < 1 or sizes[-1] > train_size:
        raise SplitError(f"subset sizes {list(subset_sizes)} must lie in [1, train_size={train_size}]")
    if num_splits < 1 or train_size < 1 or val_size < 1:
        raise SplitError("num_splits, train_size and val_size must be >= 1")
    categories = sorted({m.category for m in labeled})
    if not categories:
        raise SplitError("no labeled examples")
    by_cat: dict[str, dict[str, list[ExampleMeta]]] = {c: {} for c in categories}
    for m in labeled:
        by_cat[m.category].setdefault(m.sequence_id, []).append(m)
    train_q = _quota(train_size, categories)
    val_q = _quota(val_size, categories)
    for c in categories:
        have = sum(len(v) for v in by_cat[c].values())
        if have < train_q[c] + val_q[c]:
            raise SplitError(f"category {c}: {have} labeled examples, need {train_q[c]} train + {val_q[c]} validation")

    unlabeled = list(unlabeled or [])
    splits = []
    for sid in range(num_splits):
        gen = seeding.rng(seed, "split", sid)
        train: list[ExampleMeta] = []
        val: list[ExampleMeta] = []
        for c in categories:
            frames = {s: sorted(v, key=lambda m: m.frame_index) for s, v in by_cat[c].items()}
            seqs = sorted(frames)
            tr_seqs, va_seqs = _partition_sequences(seqs, frames, train_q[c], val_q[c], gen)
            tr_pool = [m for s in sorted(tr_seqs) for m in frames[s]]
            va_pool = [m for s in sorted(va_seqs) for m in frames[s]]
            train += [tr_pool[i] for i in sorted(gen.choice(len(tr_pool), train_q[c], replace=False))]
            val += [va_pool[i] for i in sorted(gen.choice(len(va_pool), val_q[c], replace=False))]
        train = [train[i] for i in gen.permutation(len(train))]
        perm = gen.permutation(train_size)
        nested = {s: sorted(int(i) for i in perm[:s]) for s in sizes}
        splits.append(DatasetSplit(sid, train, val, unlabeled, nested))
    return splits


def check_split(split: DatasetSplit, train_size: int | None = None, val_size: int | None = None) -> None:
    """Raise :class:`SplitError` when a split violates the protocol invariants."""
    if train_size is not None and len(split.train) != train_size:
        raise SplitError(f"split {split.id}: train has {len(split.train)} items, expected {train_size}")
    if val_size is not None and len(split.validation) != val_size:
        raise SplitError(f"split {split.id}: validation has {len(split.validation)} items, expected {val_size}")
    train_keys = {it.key for it in split.train}
    if len(train_keys) != len(split.train):
        raise SplitError(f"split {split.id}: duplicate train examples")
    if train_keys & {it.key for it in split.validation}:
        raise SplitError(f"split {split.id}: train and validation overlap")
    cats = {it.category for it in split.train} | {it.category for it in split.validation}
    for c in cats:
        tr = {it.sequence_id for it in split.train if it.category == c}
        va = {it.sequence_id for it in split.validation if it.category == c}
        if tr & va:
            raise SplitError(f"split {split.id}: category {c} shares sequences {sorted(tr & va)}")
    for part in (split.train, split.validation):
        counts = [sum(1 for it in part if it.category == c) for c in sorted(cats)]
        if counts and max(counts) - min(counts) > 1:
            raise SplitError(f"split {split.id}: category counts {counts} are unbalanced")
    prev: set[int] = set()
    for size in sorted(split.nested_subsets):
        idx = split.nested_subsets[size]
        cur = set(idx)
        if len(cur) != size or len(idx) != size:
            raise SplitError(f"split {split.id}: subset {size} has {len(cur)} distinct indices")
        if not prev <= cur:
            raise SplitError(f"split {split.id}: subset {size} does not contain the smaller subset")
        if cur and (min(cur) < 0 or max(cur) >= len(split.train)):
            raise SplitError(f"split {split.id}: subset {size} indexes outside the train set")
        prev = cur


def exclusion_filter(timestamps: Sequence[float], labeled_times: Sequence[float], window_s: float,
                     keep_every: int) -> list[int]:
    """Indices of frames farther than ``window_s`` from every labeled timestamp,
    keeping only original indices divisible by ``keep_every``.
    """
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    t = np.asarray(timestamps, dtype=np.float64)
    if t.size and np.any(np.diff(t) < 0):
        raise ValueError("timestamps must be nondecreasing")
    near = np.zeros(t.shape, dtype=bool)
    tol = 1e-9 * max(1.0, float(np.abs(t).max(initial=0.0)))
    for lt in labeled_times:
        near |= np.abs(t - float(lt)) <= window_s + tol
    idx = np.arange(t.size)
    return [int(i) for i in idx[~near & (idx % keep_every == 0)]]


def unlabeled_from_sequences(sequences: dict[str, Sequence[float]], labeled: Sequence[ExampleMeta],
                             window_s: float = 10.0, keep_every: int = 5,
                             categories: dict[str, str] | None = None) -> list[ExampleMeta]:
    """Unlabeled pool: every sequence filtered around the labeled frames it contains."""
    by_seq: dict[str, list[float]] = {}
    for m in labeled:
        by_seq.setdefault(m.sequence_id, []).append(m.timestamp)
    out = []
    for sid in sorted(sequences):
        ts = sequences[sid]
        cat = (categories or {}).get(sid, "raw")
        for i in exclusion_filter(ts, by_seq.get(sid, []), window_s, keep_every):
            out.append(ExampleMeta(sid, i, cat, float(ts[i])))
    return out


def materialize(split: DatasetSplit, render: Callable[[object, bool], TwoViewExample],
                cache: dict | None = None) -> DatasetSplit:
    """Replace metadata entries by rendered examples (labels kept for train/validation)."""
    cache = {} if cache is None else cache

    def get(item, labeled: bool):
        key = (item.sequence_id, item.frame_index, labeled)
        if key not in cache:
            cache[key] = render(item, labeled)
        return cache[key]

    return DatasetSplit(
        split.id,
        [get(m, True) for m in split.train],
        [get(m, True) for m in split.validation],
        [get(m, False) for m in split.unlabeled],
        {k: list(v) for k, v in split.nested_subsets.items()},
    )


def save_manifest(split: DatasetSplit, path) -> None:
    Path(path).write_text(json.dumps(split.to_manifest(), indent=1, sort_keys=True) + "\n")


def load_manifest(path, lookup: Callable[[str, int], object]) -> DatasetSplit:
    """Rebuild a split from a manifest; ``lookup(sequence_id, frame_index)`` resolves entries."""
    m = json.loads(Path(path).read_text())
    resolve = lambda rows: [lookup(str(s), int(f)) for s, f in rows]  # noqa: E731
    return DatasetSplit(
        int(m["id"]),
        resolve(m["train"]),
        resolve(m["validation"]),
        resolve(m["unlabeled"]),
        {int(k): [int(i) for i in v] for k, v in m["nested_subsets"].items()},
    )


def load_kitti_metadata(path) -> tuple[list[ExampleMeta], dict[str, list[float]]]:
    """Read the real-data metadata file.

    JSON layout::

        {"labeled": [{"sequence": "...", "frame": 12, "timestamp": 1.2, "category": "UM"}, ...],
         "sequences": {"<sequence>": {"timestamps": [...]} | {"num_frames": n, "rate_hz": 10}}}
    """
    doc = json.loads(Path(path).read_text())
    labeled = []
    for i, row in enumerate(doc.get("labeled", [])):
        try:
            labeled.append(ExampleMeta(str(row["sequence"]), int(row["frame"]), str(row["category"]),
                                       float(row["timestamp"])))
        except KeyError as exc:
            raise SplitError(f"labeled entry {i} lacks field {exc.args[0]!r}") from None
    seqs: dict[str, list[float]] = {}
    for sid, entry in doc.get("sequences", {}).items():
        if "timestamps" in entry:
            seqs[sid] = [float(t) for t in entry["timestamps"]]
        elif "num_frames" in entry:
            rate = float(entry.get("rate_hz", 10.0))
            seqs[sid] = [i / rate for i in range(int(entry["num_frames"]))]
        else:
            raise SplitError(f"sequence {sid!r} needs 'timestamps' or 'num_frames'")
    return labeled, seqs
