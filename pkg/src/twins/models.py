"""Twins-PCPVT / Twins-SVT configurations and model assembly."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .blocks import (
    BlockKind,
    EncoderBlock,
    HeadParams,
    PatchEmbedParams,
    PegParams,
    classify_head,
    encoder_block,
    patch_embed,
    peg,
)
from .module import Init, Module
from .tensor import DimensionError, Tensor, as_tensor, no_grad

MIN_INPUT = 32


@dataclass(frozen=True)
class StageConfig:
    patch_size: int
    channels: int
    depth: int
    heads: int
    mlp_ratio: float
    pattern: tuple[str, ...]
    lsa_window: tuple[int, int] | None = None
    reduction_ratio: int = 1
    peg_after_block: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(self.pattern))
        if self.lsa_window is not None:
            object.__setattr__(self, "lsa_window", tuple(self.lsa_window))
        if min(self.patch_size, self.channels, self.depth, self.heads) < 1:
            raise ValueError(f"stage sizes must be positive: {self}")
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if len(self.pattern) != self.depth:
            raise ValueError(f"pattern {''.join(self.pattern)} has length {len(self.pattern)}, depth is {self.depth}")
        kinds = [BlockKind.from_letter(c) for c in self.pattern]
        if BlockKind.LSA_BLOCK in kinds and (self.lsa_window is None or min(self.lsa_window) < 1):
            raise ValueError("L blocks require lsa_window")
        if self.reduction_ratio < 1:
            raise ValueError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")
        if not 0 <= self.peg_after_block < self.depth:
            raise ValueError(f"peg_after_block {self.peg_after_block} outside [0, {self.depth})")


@dataclass(frozen=True)
class ModelConfig:
    name: str
    stages: tuple[StageConfig, ...]
    num_classes: int = 1000
    input_size: tuple[int, int] = (224, 224)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if len(self.stages) != 4:
            raise ValueError(f"expected 4 stages, got {len(self.stages)}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    def to_json(self) -> str:
        stages = []
        for s in self.stages:
            d = asdict(s)
            d["pattern"] = list(s.pattern)
            d["lsa_window"] = list(s.lsa_window) if s.lsa_window else None
            if s.peg_after_block == 0:
                del d["peg_after_block"]
            stages.append(d)
        obj = {"name": self.name, "stages": stages, "num_classes": self.num_classes, "input_size": list(self.input_size)}
        return json.dumps(obj, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        obj = json.loads(text)
        stages = [StageConfig(**s) for s in obj["stages"]]
        return cls(
            name=obj["name"],
            stages=stages,
            num_classes=obj.get("num_classes", 1000),
            input_size=tuple(obj.get("input_size", (224, 224))),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())


def svt_pattern(stage: int, depth: int) -> tuple[str, ...]:
    """Stages 1-3 alternate LSA/GSA starting with LSA; stage 4 is all GSA."""
    if stage == 3:
        return ("G",) * depth
    return tuple("LG"[i % 2] for i in range(depth))


_PATCH = (4, 2, 2, 2)
_RATIOS = (8, 4, 2, 1)

_PCPVT_DEPTHS = {"s": (3, 4, 6, 3), "b": (3, 4, 18, 3), "l": (3, 8, 27, 3)}
_SVT = {
    "s": ((64, 128, 256, 512), (2, 2, 10, 4)),
    "b": ((96, 192, 384, 768), (2, 2, 18, 2)),
    "l": ((128, 256, 512, 1024), (2, 2, 18, 2)),
}
BUILTIN_NAMES = ("pcpvt-s", "pcpvt-b", "pcpvt-l", "svt-s", "svt-b", "svt-l")


def builtin_config(name: str, num_classes: int = 1000) -> ModelConfig:
    """Return one of the six named Twins variants."""
    family, _, size = name.lower().partition("-")
    if family == "pcpvt" and size in _PCPVT_DEPTHS:
        stages = [
            StageConfig(
                patch_size=_PATCH[i],
                channels=(64, 128, 320, 512)[i],
                depth=d,
                heads=(1, 2, 5, 8)[i],
                mlp_ratio=(8, 8, 4, 4)[i],
                pattern=("S",) * d,
                reduction_ratio=_RATIOS[i],
            )
            for i, d in enumerate(_PCPVT_DEPTHS[size])
        ]
    elif family == "svt" and size in _SVT:
        channels, depths = _SVT[size]
        stages = [
            StageConfig(
                patch_size=_PATCH[i],
                channels=c,
                depth=d,
                heads=c // 32,
                mlp_ratio=4,
                pattern=svt_pattern(i, d),
                lsa_window=(7, 7),
                reduction_ratio=_RATIOS[i],
            )
            for i, (c, d) in enumerate(zip(channels, depths))
        ]
    else:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    return ModelConfig(name=f"twins-{name.lower()}", stages=stages, num_classes=num_classes)


MICRO_DEPTHS = (1, 1, 2, 1)


def micro_config(name: str, num_classes: int = 10) -> ModelConfig:
    """Scaled-down variant for toy training: channels / 4, depths [1, 1, 2, 1].

    Heads are divided by 4 (at least 1); block patterns are the named
    variant's patterns truncated to the new depths.
    """
    base = builtin_config(name.lower().removeprefix("micro-"), num_classes)
    stages = []
    for i, s in enumerate(base.stages):
        depth = MICRO_DEPTHS[i]
        channels = s.channels // 4
        heads = max(1, s.heads // 4)
        while channels % heads:
            heads -= 1
        stages.append(replace(s, channels=channels, depth=depth, heads=heads, pattern=s.pattern[:depth]))
    return ModelConfig(name=f"micro-{base.name}", stages=stages, num_classes=num_classes, input_size=(32, 32))


def resolve_config(name: str, num_classes: int | None = None) -> ModelConfig:
    """Named variant, ``micro-<variant>``, or a path to a config JSON."""
    if name.lower().startswith("micro-"):
        return micro_config(name, 10 if num_classes is None else num_classes)
    if name.lower() in BUILTIN_NAMES:
        return builtin_config(name, 1000 if num_classes is None else num_classes)
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        cfg = ModelConfig.load(path)
        return cfg if num_classes is None else replace(cfg, num_classes=num_classes)
    raise KeyError(f"unknown model {name!r}")


class Stage(Module):
    def __init__(self, init: Init, cfg: StageConfig, in_dim: int):
        self.config = cfg
        self.patch_embed = PatchEmbedParams(init, cfg.patch_size, in_dim, cfg.channels)
        self.blocks = [
            EncoderBlock(
                init,
                BlockKind.from_letter(letter),
                cfg.channels,
                cfg.heads,
                cfg.mlp_ratio,
                window=cfg.lsa_window,
                ratio=cfg.reduction_ratio,
            )
            for letter in cfg.pattern
        ]
        self.peg = PegParams(init, cfg.channels)

    def __call__(self, x: Tensor) -> Tensor:
        x = patch_embed(x, self.patch_embed)
        for i, blk in enumerate(self.blocks):
            x = encoder_block(x, blk)
            if i == self.config.peg_after_block:
                x = peg(x, self.peg)
        return x


class Twins(Module):
    def __init__(self, cfg: ModelConfig, init: Init):
        self.config = cfg
        dims = [3] + [s.channels for s in cfg.stages]
        self.stages = [Stage(init, s, dims[i]) for i, s in enumerate(cfg.stages)]
        self.head = HeadParams(init, dims[-1], cfg.num_classes)

    def __call__(self, images, return_features: bool = False):
        return forward(self, images, return_features=return_features)

    @property
    def dtype(self):
        return self.head.weight.dtype


def build(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Twins:
    """Instantiate ``cfg`` with deterministic weights drawn from ``seed``."""
    return Twins(cfg, Init(seed, dtype=dtype))


def forward(model: Twins, images, return_features: bool = False):
    """Logits ``(B, num_classes)`` for images ``(B, H, W, 3)``.

    With ``return_features`` also returns the per-stage feature maps.
    """
    x = as_tensor(images, dtype=model.dtype)
    if x.dtype != model.dtype:
        x = Tensor(x.data.astype(model.dtype))
    if x.ndim != 4 or x.shape[-1] != 3:
        raise DimensionError(f"images must be (B, H, W, 3), got {x.shape}")
    if min(x.shape[1:3]) < MIN_INPUT:
        raise DimensionError(f"images must be at least {MIN_INPUT}x{MIN_INPUT}, got {x.shape[1]}x{x.shape[2]}")
    feats = []
    for stage in model.stages:
        x = stage(x)
        feats.append(x)
    logits = classify_head(x, model.head)
    return (logits, feats) if return_features else logits


def stage_grids(cfg: ModelConfig, h: int, w: int) -> list[tuple[int, int]]:
    """Output grid of each stage: ceil-division by the cumulative patch strides."""
    out = []
    for s in cfg.stages:
        h, w = -(-h // s.patch_size), -(-w // s.patch_size)
        out.append((h, w))
    return out


def predict(model: Twins, images, batch_size: int = 64) -> np.ndarray:
    """Logits as a numpy array, evaluated without gradient tracking."""
    images = np.asarray(images)
    outs = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            outs.append(forward(model, images[i : i + batch_size]).data)
    return np.concatenate(outs, axis=0)


__all__ = [
    "BUILTIN_NAMES",
    "ModelConfig",
    "StageConfig",
    "Twins",
    "build",
    "builtin_config",
    "forward",
    "micro_config",
    "predict",
    "resolve_config",
    "stage_grids",
    "svt_pattern",
]
