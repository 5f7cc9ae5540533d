"""Training configuration: profiles, TOML loading, environment overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

VARIANTS = ("full", "no_memory", "concat_only", "fol_only", "flow_only")


@dataclass
class TrainConfig:
    """Hyperparameters for model, optimizer, and scoring.

    Defaults are the desk profile (small model, minutes on a laptop CPU).
    ``TrainConfig.full_scale()`` restores the published full-scale settings.
    """

    # model
    d_model: int = 64           # token width D
    height: int = 64            # flow raster H
    width: int = 64             # flow raster W
    mem_slots: int = 100        # memory slots M per layer
    shrink_lambda: float = 0.03  # hard-shrinkage threshold, 3/M
    shrink_eps: float = 1e-12
    layers: int = 3             # MAMR depth L
    heads: int = 8
    roi_size: int = 5           # RoI pooling grid k
    share_memory: bool = False  # one bank shared across layers (ablation)
    use_skip: bool = True       # encoder-to-decoder skip connection

    # windows
    obs_len: int = 5
    pred_len: int = 10
    delta: int = 5              # rollout buffer depth for the variance score

    # scoring
    alpha: float = 0.4          # fusion coefficient
    normalize_per_clip: bool = False

    # loss coefficients
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.0002

    # optimizer
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 5e-4
    grad_clip: float = 5.0
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even for sinusoidal position encoding")
        if self.d_model % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.mem_slots < 1:
            raise ValueError("mem_slots must be >= 1")
        if self.shrink_lambda < 0 or self.shrink_eps <= 0:
            raise ValueError("require shrink_lambda >= 0 and shrink_eps > 0")
        self.betas = tuple(self.betas)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small profile sized for CPU-minutes runs."""
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Published full-scale profile."""
        base = dict(
            d_model=512,
            mem_slots=1000,
            shrink_lambda=3 / 1000,
            layers=3,
            heads=8,
            obs_len=5,
            pred_len=10,
            alpha=0.4,
            lambda1=1.0,
            lambda2=1.0,
            lambda3=0.0002,
            lr=1e-4,
            betas=(0.9, 0.999),
            weight_decay=5e-4,
            batch_size=128,
            epochs=100,
        )
        base.update(overrides)
        return cls(**base)


def _coerce(raw: str, typ, field_name: str):
    if typ is bool or typ == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {raw!r} for {field_name}")
    if typ is int or typ == "int":
        return int(raw)
    if typ is float or typ == "float":
        return float(raw)
    if typ is str or typ == "str":
        return raw
    # betas: "0.9,0.999"
    if field_name == "betas":
        parts = [float(p) for p in raw.split(",")]
        if len(parts) != 2:
            raise ValueError(f"betas needs two comma-separated floats, got {raw!r}")
        return tuple(parts)
    raise ValueError(f"unsupported override type for {field_name}")


def env_overrides(environ=None) -> dict:
    """Collect TAD_<FIELD> environment overrides for TrainConfig fields."""
    environ = os.environ if environ is None else environ
    found = {}
    for field in dataclasses.fields(TrainConfig):
        key = f"TAD_{field.name.upper()}"
        if key in environ:
            found[field.name] = _coerce(environ[key], field.type, field.name)
    return found


def load_train_config(path: str | Path | None = None,
                      overrides: dict | None = None,
                      environ=None) -> TrainConfig:
    """Build a TrainConfig from (lowest to highest precedence):
    desk defaults, a TOML file, explicit overrides, TAD_<FIELD> environment
    variables.
    """
    values: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields in {path}: {sorted(unknown)}")
        values.update(doc)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    values.update(env_overrides(environ))
    if "betas" in values and not isinstance(values["betas"], tuple):
        values["betas"] = tuple(values["betas"])
    return TrainConfig(**values)


def config_hash(cfg: TrainConfig) -> str:
    """Stable hash of a config, stored in checkpoints for compatibility checks."""
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
