"""Experiment configuration: one JSON document, validated, with lossless round-trip.

Top-level keys::

    mode            "synthetic" or "kitti-files"
    seed            master seed; every random stream is derived from it
    output_dir      where manifests, logs, results and checkpoints go
    models          {"lidar": ModelConfig, "camera": ModelConfig}
    cotrain         CotrainConfig (with nested "optim" and "augment")
    split           SplitConfig
    synthetic       SyntheticConfig (scene parameters and world layout)
    kitti           KittiConfig (metadata and preprocessed frame paths)
    blum_mitchell   BlumMitchellConfig

Missing keys take their defaults; unknown keys are rejected. The effective
configuration, defaults included, is written next to every output.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentParams
from .cotrain import CotrainConfig, OptimConfig
from .data import DESK_SUBSET_SIZES
from .models import ConfigError, ModelConfig
from .synthetic import CAMERA_MEAN, CAMERA_STD, LIDAR_MEAN, LIDAR_STD, SceneParams

MODES = ("synthetic", "kitti-files")


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return d


@dataclass(frozen=True)
class SplitConfig:
    num_splits: int = 20
    train_size: int = 128
    val_size: int = 128
    subset_sizes: tuple[int, ...] = DESK_SUBSET_SIZES
    # unlabeled pool: exclusion window around labeled frames, temporal stride, optional cap
    window_s: float = 10.0
    keep_every: int = 5
    unlabeled_limit: int | None = 512

    def __post_init__(self):
        object.__setattr__(self, "subset_sizes", tuple(int(s) for s in self.subset_sizes))
        if self.num_splits < 1 or self.train_size < 1 or self.val_size < 1 or self.keep_every < 1:
            raise ConfigError("num_splits, train_size, val_size and keep_every must be >= 1")
        if self.window_s < 0:
            raise ConfigError("window_s must be >= 0")
        if self.unlabeled_limit is not None and self.unlabeled_limit < 0:
            raise ConfigError("unlabeled_limit must be >= 0")


@dataclass(frozen=True)
class SyntheticConfig:
    scene: SceneParams = field(default_factory=SceneParams)
    sequences_per_category: int = 12
    labeled_per_sequence: int = 10
    frames_per_sequence: int = 600
    unlabeled_sequences: int = 12

    def __post_init__(self):
        if isinstance(self.scene, dict):
            object.__setattr__(self, "scene", SceneParams.from_dict(self.scene))

    def world_kwargs(self) -> dict:
        return {"params": self.scene, "sequences_per_category": self.sequences_per_category,
                "labeled_per_sequence": self.labeled_per_sequence,
                "frames_per_sequence": self.frames_per_sequence,
                "unlabeled_sequences": self.unlabeled_sequences}


@dataclass(frozen=True)
class KittiConfig:
    """Real-data inputs.

    ``metadata`` is the JSON read by :func:`roadcotrain.data.load_kitti_metadata`.
    ``frames_dir`` holds preprocessed frames as
    ``<sequence>/<frame:06d>.{camera,lidar,coverage,label}.f64`` in the tensor
    format; ``label`` is only needed for labeled frames and may mark ignored
    pixels with -1.
    """

    metadata: str | None = None
    frames_dir: str | None = None


@dataclass(frozen=True)
class BlumMitchellConfig:
    p: int = 1
    n: int = 1
    iterations: int = 10
    pool_size: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    mode: str = "synthetic"
    output_dir: str = "runs/default"
    models: dict = field(default_factory=lambda: default_models())
    cotrain: CotrainConfig = field(default_factory=CotrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    kitti: KittiConfig = field(default_factory=KittiConfig)
    blum_mitchell: BlumMitchellConfig = field(default_factory=BlumMitchellConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        # one master seed: the training loops always follow it
        if self.cotrain.seed != self.seed:
            object.__setattr__(self, "cotrain", replace(self.cotrain, seed=self.seed))
        if set(self.models) != {"lidar", "camera"}:
            raise ConfigError("models needs exactly the keys 'lidar' and 'camera'")
        for key in ("lidar", "camera"):
            if not isinstance(self.models[key], ModelConfig):
                raise ConfigError(f"models.{key} must be a ModelConfig")
        if max(self.split.subset_sizes) > self.split.train_size:
            raise ConfigError("subset sizes cannot exceed split.train_size")
        if self.mode == "kitti-files":
            for name in ("metadata", "frames_dir"):
                path = getattr(self.kitti, name)
                if path is None or not Path(path).exists():
                    raise ConfigError(f"kitti.{name} must name an existing path, got {path!r}")

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "output_dir": self.output_dir,
            "models": {k: self.models[k].to_dict() for k in ("camera", "lidar")},
            "cotrain": self.cotrain.to_dict(),
            "split": {**asdict(self.split), "subset_sizes": list(self.split.subset_sizes)},
            "synthetic": {**asdict(self.synthetic), "scene": self.synthetic.scene.to_dict()},
            "kitti": asdict(self.kitti),
            "blum_mitchell": asdict(self.blum_mitchell),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(_strict(cls, d, "config"))
        if "seed" not in d:
            raise ConfigError("config must set 'seed'")
        if "models" in d:
            models = default_models()
            for k, v in _strict_models(d["models"]).items():
                models[k] = ModelConfig.from_dict(v)
            d["models"] = models
        if "cotrain" in d:
            c = dict(_strict(CotrainConfig, d["cotrain"], "cotrain"))
            if "optim" in c:
                c["optim"] = OptimConfig(**_strict(OptimConfig, c["optim"], "cotrain.optim"))
            if "augment" in c:
                c["augment"] = AugmentParams.from_dict(_strict(AugmentParams, c["augment"], "cotrain.augment"))
            d["cotrain"] = CotrainConfig(**c)
        if "split" in d:
            d["split"] = SplitConfig(**_strict(SplitConfig, d["split"], "split"))
        if "synthetic" in d:
            s = dict(_strict(SyntheticConfig, d["synthetic"], "synthetic"))
            if "scene" in s:
                s["scene"] = SceneParams.from_dict(_strict(SceneParams, s["scene"], "synthetic.scene"))
            d["synthetic"] = SyntheticConfig(**s)
        if "kitti" in d:
            d["kitti"] = KittiConfig(**_strict(KittiConfig, d["kitti"], "kitti"))
        if "blum_mitchell" in d:
            d["blum_mitchell"] = BlumMitchellConfig(**_strict(BlumMitchellConfig, d["blum_mitchell"],
                                                              "blum_mitchell"))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        return replace(self, **changes) if changes else self


def _strict_models(d) -> dict:
    if not isinstance(d, dict) or set(d) - {"lidar", "camera"}:
        raise ConfigError("models may only contain 'lidar' and 'camera'")
    return d


def default_models(widths=(8, 8)) -> dict[str, ModelConfig]:
    return {
        "lidar": ModelConfig(channel_widths=widths, input_mean=LIDAR_MEAN, input_std=LIDAR_STD),
        "camera": ModelConfig(channel_widths=widths, input_mean=CAMERA_MEAN, input_std=CAMERA_STD),
    }


def benchmark_config(seed: int = 0, output_dir: str = "runs/benchmark") -> ExperimentConfig:
    """The desk-scale trend benchmark: 10 splits, sizes {4, 128}, 512 unlabeled frames."""
    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        cotrain=CotrainConfig(supervised_steps=3000, semisup_steps=4000, batch_size=1, lambda_cot=0.25,
                              eval_every=500, optim=OptimConfig(eta0=1e-3)),
        split=SplitConfig(num_splits=10, train_size=128, val_size=128, subset_sizes=(4, 128),
                          unlabeled_limit=512),
    )
