"""Model/training configuration and its flat ``key=value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

from .errors import ConfigurationError

CONNECTIONS = ("before", "post")
VARIANTS = ("hs2fpn", "hs2fpn_no_mhf", "fpn_add", "fgfp_like")
MHF_STAGES = ("cem", "cem+msem", "full")
GATE_MODES = ("broadcast", "conv")


@dataclass
class MhfConfig:
    num_heads: int = 4
    reduction: int = 4
    spatial_kernel: int = 7
    connection: str = "before"
    stages: str = "full"
    hcem_sigmoid: bool = True
    gate_mode: str = "broadcast"

    def validate(self) -> None:
        if self.num_heads < 1 or self.reduction < 1:
            raise ConfigurationError("mhf.num_heads and mhf.reduction must be >= 1")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ConfigurationError(f"mhf.spatial_kernel must be odd, got {self.spatial_kernel}")
        if self.connection not in CONNECTIONS:
            raise ConfigurationError(f"mhf.connection must be one of {CONNECTIONS}")
        if self.stages not in MHF_STAGES:
            raise ConfigurationError(f"mhf.stages must be one of {MHF_STAGES}")
        if self.gate_mode not in GATE_MODES:
            raise ConfigurationError(f"mhf.gate_mode must be one of {GATE_MODES}")


@dataclass
class FusionConfig:
    variant: str = "hs2fpn"
    lateral_channels: int = 64
    vss_depth: int = 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"fusion.variant must be one of {VARIANTS}")
        if self.lateral_channels < 1 or self.vss_depth < 0:
            raise ConfigurationError("fusion.lateral_channels >= 1 and fusion.vss_depth >= 0 required")


@dataclass
class TtcWeights:
    cls: float = 1.0
    loc: float = 0.5
    cnt: float = 0.1
    # "mean": plain average over proposals; "balanced": positives and
    # negatives averaged separately, then summed
    cls_balance: str = "balanced"

    def validate(self) -> None:
        if min(self.cls, self.loc, self.cnt) < 0:
            raise ConfigurationError("ttc weights must be non-negative")
        if self.cls_balance not in ("mean", "balanced"):
            raise ConfigurationError(f"ttc.cls_balance must be mean or balanced, got {self.cls_balance!r}")


@dataclass
class ModelConfig:
    base_channels: int = 32
    stage_depths: Tuple[int, int, int] = (2, 2, 2)
    state_dim: int = 8
    ssm_expand: int = 1
    mhf: MhfConfig = field(default_factory=MhfConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head_hidden: int = 32
    grid_stride: int = 2
    threshold: float = 0.5
    match_tau: float = 0.0
    ttc: TtcWeights = field(default_factory=TtcWeights)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 1
    steps: int = 3000
    seed: int = 0
    augment: bool = False

    def validate(self) -> "ModelConfig":
        if self.base_channels < 1 or self.state_dim < 1 or self.ssm_expand < 1:
            raise ConfigurationError("base_channels, state_dim and ssm_expand must be >= 1")
        if len(self.stage_depths) != 3 or min(self.stage_depths) < 0:
            raise ConfigurationError("stage_depths needs three non-negative entries")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in (0, 1]")
        if self.grid_stride < 1 or 4 % self.grid_stride:
            raise ConfigurationError("grid_stride must divide the feature stride 4")
        if self.lr <= 0 or self.batch_size < 1 or self.steps < 0:
            raise ConfigurationError("lr > 0, batch_size >= 1 and steps >= 0 required")
        self.mhf.validate()
        self.fusion.validate()
        self.ttc.validate()
        return self

    # -- flat key=value form --------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        flat: Dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    flat[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
            else:
                flat[f.name] = value
        return flat

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, items: Dict[str, str]) -> "ModelConfig":
        cfg = cls()
        known = cfg.to_dict()
        for key, raw in items.items():
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            value = _coerce(key, raw, known[key])
            if "." in key:
                group, name = key.split(".", 1)
                setattr(getattr(cfg, group), name, value)
            else:
                setattr(cfg, key, value)
        return cfg.validate()

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        items: Dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            items[key] = value
        return cls.from_dict(items)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def toy_config(**overrides) -> ModelConfig:
    """The desk-scale configuration used for synthetic overfitting runs."""
    return ModelConfig.from_dict(overrides)
