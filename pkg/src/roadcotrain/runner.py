"""File-level orchestration behind the command line: manifests, per-cell results, reports.

Output layout under ``output_dir``::

    config.json                         effective configuration
    splits/split_XX.json                one manifest per split
    results/<method>/split_XX_N_YYY.json  one file per finished cell
    logs/<method>/split_XX_N_YYY.jsonl  validation history of that cell
    checkpoints/<method>/split_XX_N_YYY/<view>/
    report.tsv, report.txt, per_split.tsv

A cell whose result file exists is skipped, so an interrupted run resumes
where it stopped and, with everything seeded per cell, finishes with the same
files as an uninterrupted one.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import cotrain, data, seeding
from .config import ExperimentConfig
from .evaluation import ScoreTable, format_table
from .losses import LabelMask
from .models import init_model, save_checkpoint
from .numgrad import FormatError, serialize
from .synthetic import SyntheticWorld

log = logging.getLogger(__name__)

TRAIN_METHODS = ("supervised", "cotrain", "blum-mitchell")
VIEWS = ("lidar", "camera")


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


# ---------------------------------------------------------------------------
# data sources

@dataclass
class Source:
    labeled: list[data.ExampleMeta]
    unlabeled: list[data.ExampleMeta]
    render: Callable[[object, bool], data.TwoViewExample]
    lookup: Callable[[str, int], data.ExampleMeta]


def _subsample(pool: list, limit: int | None, seed: int) -> list:
    if limit is None or limit >= len(pool):
        return pool
    keep = sorted(seeding.rng(seed, "unlabeled-subsample").choice(len(pool), limit, replace=False))
    return [pool[i] for i in keep]


class KittiFrames:
    """Preprocessed frames stored as tensor files (see :class:`roadcotrain.config.KittiConfig`)."""

    def __init__(self, frames_dir, labeled: Sequence[data.ExampleMeta], sequences: dict[str, list[float]]):
        self.root = Path(frames_dir)
        self.meta = {m.key: m for m in labeled}
        self.sequences = sequences

    def _path(self, sid: str, frame: int, part: str) -> Path:
        return self.root / sid / f"{frame:06d}.{part}.f64"

    def lookup(self, sid: str, frame: int) -> data.ExampleMeta:
        if (sid, frame) in self.meta:
            return self.meta[(sid, frame)]
        if sid not in self.sequences:
            raise FormatError(f"manifest names unknown sequence {sid!r}")
        return data.ExampleMeta(sid, frame, "raw", float(self.sequences[sid][frame]))

    def render(self, item, labeled: bool = True) -> data.TwoViewExample:
        sid, frame = item.sequence_id, int(item.frame_index)
        cam = serialize.load(self._path(sid, frame, "camera"))
        lidar = serialize.load(self._path(sid, frame, "lidar"))
        cov_path = self._path(sid, frame, "coverage")
        coverage = serialize.load(cov_path) if cov_path.exists() else None
        label = None
        if labeled:
            raw = serialize.load(self._path(sid, frame, "label"))
            label = LabelMask(np.where(raw > 0, 1, 0), raw >= 0)
        return data.TwoViewExample(cam, lidar, label, sid, frame, item.category, coverage)


def build_source(cfg: ExperimentConfig) -> Source:
    if cfg.mode == "synthetic":
        world = SyntheticWorld(cfg.seed, **cfg.synthetic.world_kwargs())
        unl = world.unlabeled_metadata(cfg.split.window_s, cfg.split.keep_every, cfg.split.unlabeled_limit)
        return Source(world.labeled_metadata(), unl, world.render, world.lookup)
    labeled, sequences = data.load_kitti_metadata(cfg.kitti.metadata)
    pool = data.unlabeled_from_sequences(sequences, labeled, cfg.split.window_s, cfg.split.keep_every)
    frames = KittiFrames(cfg.kitti.frames_dir, labeled, sequences)
    return Source(labeled, _subsample(pool, cfg.split.unlabeled_limit, cfg.seed), frames.render, frames.lookup)


# ---------------------------------------------------------------------------
# splits

def manifest_path(out: Path, split_id: int) -> Path:
    return out / "splits" / f"split_{split_id:02d}.json"


def write_splits(cfg: ExperimentConfig, out: Path | None = None) -> list[Path]:
    out = Path(out or cfg.output_dir)
    src = build_source(cfg)
    s = cfg.split
    splits = data.generate_splits(src.labeled, s.num_splits, s.train_size, s.val_size, s.subset_sizes,
                                  cfg.seed, src.unlabeled)
    paths = []
    for sp in splits:
        data.check_split(sp, s.train_size, s.val_size)
        p = manifest_path(out, sp.id)
        _write_atomic(p, _dumps(sp.to_manifest()))
        paths.append(p)
    write_config(cfg, out)
    return paths


def write_config(cfg: ExperimentConfig, out: Path) -> None:
    _write_atomic(Path(out) / "config.json", cfg.to_json())


def load_splits(cfg: ExperimentConfig, out: Path, src: Source | None = None) -> list[data.DatasetSplit]:
    src = src or build_source(cfg)
    paths = sorted((Path(out) / "splits").glob("split_*.json"))
    if not paths:
        raise FileNotFoundError(f"no split manifests under {Path(out) / 'splits'}; run the split command first")
    return [data.load_manifest(p, src.lookup) for p in paths]


# ---------------------------------------------------------------------------
# training

def cell_name(split_id: int, size: int) -> str:
    return f"split_{split_id:02d}_N_{size:03d}"


def result_path(out: Path, method: str, split_id: int, size: int) -> Path:
    return Path(out) / "results" / method / f"{cell_name(split_id, size)}.json"


def _run_one(cfg: ExperimentConfig, method: str, split: data.DatasetSplit, size: int):
    if method == "blum-mitchell":
        bm = cfg.blum_mitchell
        stream = ("cell", split.id, size)
        models = {v: cfg.models[v] for v in VIEWS}
        m_l, m_c, grown, report = cotrain.blum_mitchell(
            _cell_model(models["lidar"], cfg, stream, "lidar"), _cell_model(models["camera"], cfg, stream, "camera"),
            split.subset(size), split.unlabeled, cotrain.ConfidenceSelection(bm.p, bm.n), bm.iterations,
            min(bm.pool_size, len(split.unlabeled)), cfg.cotrain, *stream)
        scores = {v: cotrain.evaluate(m, split.validation, v) for v, m in (("lidar", m_l), ("camera", m_c))}
        extra = {"iterations_completed": report.iterations_completed, "labeled_sizes": report.labeled_sizes,
                 "terminated_early": report.terminated_early, "reason": report.reason}
        return scores, [], {"lidar": m_l, "camera": m_c}, extra
    res = cotrain.run_cell(split, size, cfg.cotrain, cfg.models, methods=(method,))
    scores = {v: res.scores[(method, v)] for v in VIEWS}
    models = {v: res.models[(method, v)] for v in VIEWS}
    return scores, res.history[method], models, {}


def _cell_model(mc, cfg, stream, view):
    return init_model(replace(mc, seed=seeding.derive_seed(cfg.seed, *stream, view, "init")))


def train_cell(cfg: ExperimentConfig, method: str, split: data.DatasetSplit, size: int, out: Path) -> dict:
    """Run one (split, N) cell and write its result, log and checkpoints."""
    scores, history, models, extra = _run_one(cfg, method, split, size)
    for v, f in scores.items():
        if not math.isfinite(f):
            raise FloatingPointError(f"{method} {cell_name(split.id, size)}: F1 for {v} is not finite")
    name = cell_name(split.id, size)
    log_path = Path(out) / "logs" / method / f"{name}.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    for v, m in models.items():
        save_checkpoint(m, Path(out) / "checkpoints" / method / name / v)
    result = {"split": split.id, "N": size, "method": method, "f1": scores, **extra}
    _write_atomic(result_path(out, method, split.id, size), _dumps(result))
    return result


def _train_job(args):
    cfg, method, split_manifest, size, out = args
    src = build_source(cfg)
    split = data.materialize(split_manifest, src.render)
    return train_cell(cfg, method, split, size, out)


def train(cfg: ExperimentConfig, method: str, out: Path | None = None, jobs: int = 1) -> list[dict]:
    """Every pending cell of ``method``; finished cells are left untouched."""
    if method not in TRAIN_METHODS:
        raise ValueError(f"method must be one of {TRAIN_METHODS}")
    out = Path(out or cfg.output_dir)
    write_config(cfg, out)
    src = build_source(cfg)
    splits = load_splits(cfg, out, src)
    todo = [(sp, n) for sp in splits for n in cfg.split.subset_sizes
            if not result_path(out, method, sp.id, n).exists()]
    log.info("%s: %d cells pending", method, len(todo))
    done = []
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            done = list(ex.map(_train_job, [(cfg, method, sp, n, out) for sp, n in todo]))
    else:
        cache: dict = {}
        rendered: dict[int, data.DatasetSplit] = {}
        for sp, n in todo:
            if sp.id not in rendered:
                rendered = {sp.id: data.materialize(sp, src.render, cache)}
            r = train_cell(cfg, method, rendered[sp.id], n, out)
            log.info("%s %s %s", method, cell_name(sp.id, n), {v: round(f, 4) for v, f in r["f1"].items()})
            done.append(r)
    return done


# ---------------------------------------------------------------------------
# reporting

def collect(results_dir: Path) -> ScoreTable:
    table = ScoreTable()
    for p in sorted(Path(results_dir).glob("*/*.json")):
        try:
            r = json.loads(p.read_text())
            for view, f1 in r["f1"].items():
                table.add(int(r["N"]), view, r["method"], int(r["split"]), float(f1))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            log.warning("skipping unreadable result %s: %s", p, exc)
    return table


def table_tsv(table: ScoreTable, method: str = "cotrain", baseline: str = "supervised") -> str:
    cols = ["N", "view", "baseline_mean", "baseline_std", "baseline_n", "method_mean", "method_std",
            "method_n", "delta"]
    lines = ["\t".join(cols)]
    for row in table.rows(method, baseline):
        cells = []
        for c in cols:
            v = row[c]
            cells.append("" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v)))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def per_split_tsv(table: ScoreTable) -> str:
    lines = ["N\tview\tmethod\tsplit\tf1"]
    for (n, view, method), vals in sorted(table.scores.items()):
        for sid in sorted(vals):
            lines.append(f"{n}\t{view}\t{method}\t{sid}\t{vals[sid]:.6f}")
    return "\n".join(lines) + "\n"


def missing_cells(table: ScoreTable, methods: Sequence[str]) -> list[str]:
    out = []
    keys = {(n, v) for (n, v, _m) in table.scores}
    splits = sorted({s for vals in table.scores.values() for s in vals})
    for n, v in sorted(keys):
        for m in methods:
            have = table.scores.get((n, v, m), {})
            gone = [s for s in splits if s not in have]
            if gone:
                out.append(f"N={n} view={v} method={m}: missing splits {gone}")
    return out


def report(out: Path, method: str = "cotrain", baseline: str = "supervised") -> str:
    out = Path(out)
    table = collect(out / "results")
    text = format_table(table, method, baseline)
    gaps = missing_cells(table, (method, baseline))
    if gaps:
        text += "\n\nmissing cells:\n" + "\n".join(f"  {g}" for g in gaps)
    text += "\n"
    _write_atomic(out / "report.txt", text)
    _write_atomic(out / "report.tsv", table_tsv(table, method, baseline))
    _write_atomic(out / "per_split.tsv", per_split_tsv(table))
    return text
