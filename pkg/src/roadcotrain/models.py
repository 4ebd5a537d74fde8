"""Per-pixel road classifiers: a same-padded conv/relu stack with a 1x1 head."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numgrad as ng
from .numgrad import DimensionError, Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    channel_widths: tuple[int, ...] = (16, 16)
    kernel_size: int = 3
    num_classes: int = 2
    seed: int = 0
    # fixed per-channel input standardisation applied inside predict
    input_mean: tuple[float, ...] | None = None
    input_std: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "channel_widths", tuple(int(w) for w in self.channel_widths))
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if any(w < 1 for w in self.channel_widths):
            raise ConfigError("channel widths must be >= 1")
        for name in ("input_mean", "input_std"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if len(val) != self.in_channels:
                    raise ConfigError(f"{name} needs {self.in_channels} entries")
                object.__setattr__(self, name, val)
        if self.input_std is not None and any(s <= 0 for s in self.input_std):
            raise ConfigError("input_std entries must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_widths"] = list(self.channel_widths)
        for name in ("input_mean", "input_std"):
            if d[name] is not None:
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        c = self.in_channels
        k = self.kernel_size
        for idx, w in enumerate(self.channel_widths):
            shapes.append((f"conv{idx}", (w, c, k, k)))
            c = w
        # no hidden layers: a single conv maps the input straight to logits
        head_k = 1 if self.channel_widths else k
        shapes.append(("head", (self.num_classes, c, head_k, head_k)))
        return shapes


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def with_params(self, params: dict[str, Tensor]) -> "Model":
        if set(params) != set(self.params):
            raise DimensionError("parameter names differ from the model's")
        return Model(self.config, dict(params))

    def copy(self) -> "Model":
        return Model(self.config, {k: Tensor._wrap(v.data.copy(), True) for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def init_bound(fan_in: int) -> float:
    return math.sqrt(1.0 / fan_in)


def init_model(config: ModelConfig) -> Model:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases."""
    if not isinstance(config, ModelConfig):
        raise ConfigError("init_model expects a ModelConfig")
    rng = np.random.default_rng(config.seed)
    params: dict[str, Tensor] = {}
    for name, shape in config.layer_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        bound = init_bound(fan_in)
        params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(shape[0]), requires_grad=True)
    return Model(config, params)


def _standardize(config: ModelConfig, view: np.ndarray) -> np.ndarray:
    if config.input_mean is None and config.input_std is None:
        return view
    mean = np.zeros(config.in_channels) if config.input_mean is None else np.asarray(config.input_mean)
    std = np.ones(config.in_channels) if config.input_std is None else np.asarray(config.input_std)
    return (view - mean[:, None, None]) / std[:, None, None]


def logits(model: Model, view, track: bool = True) -> Tensor:
    cfg = model.config
    arr = view.data if isinstance(view, Tensor) else np.asarray(view, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != cfg.in_channels:
        raise DimensionError(f"view shape {list(arr.shape)} does not match {cfg.in_channels} input channels")
    x = Tensor(_standardize(cfg, arr))
    if track:
        p = model.params
    else:
        p = {k: Tensor._wrap(v.data) for k, v in model.params.items()}
    pad = cfg.kernel_size // 2
    for idx in range(len(cfg.channel_widths)):
        x = ng.relu(ng.conv2d(x, p[f"conv{idx}.weight"], p[f"conv{idx}.bias"], stride=1, padding=pad))
    head_pad = 0 if cfg.channel_widths else pad
    return ng.conv2d(x, p["head.weight"], p["head.bias"], stride=1, padding=head_pad)


def predict(model: Model, view, track: bool = False) -> Tensor:
    """Per-pixel class probabilities ``[num_classes, H, W]``.

    With ``track=True`` the result is connected to the model parameters for
    a subsequent :func:`numgrad.backward`.
    """
    return ng.softmax(logits(model, view, track=track), axis=0)


def save_checkpoint(model: Model, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, p in model.params.items():
        ng.save(d / f"{name}.f64", p)
    (d / "config.json").write_text(json.dumps(model.config.to_dict(), indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> Model:
    d = Path(directory)
    config = ModelConfig.from_dict(json.loads((d / "config.json").read_text()))
    params = {}
    for name, shape in config.layer_shapes():
        for suffix in ("weight", "bias"):
            key = f"{name}.{suffix}"
            arr = ng.load(d / f"{key}.f64")
            expected = shape if suffix == "weight" else (shape[0],)
            if arr.shape != expected:
                raise DimensionError(f"{key}: stored shape {list(arr.shape)} expected {list(expected)}")
            params[key] = Tensor(arr, requires_grad=True)
    return Model(config, params)
