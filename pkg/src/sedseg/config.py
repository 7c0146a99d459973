"""Configuration records and their JSON form.

A config file is a JSON object with optional sections ``encoder``,
``fam``, ``decoder``, ``cer`` and ``train`` whose keys mirror the dataclass
field names below.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class EncoderConfig:
    stage_widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    stage_depths: tuple[int, int, int, int] = (1, 1, 1, 1)
    align_dim: int = 64  # D_t, must equal the text embedding width
    block_kernel: int = 7
    mlp_ratio: int = 4

    def __post_init__(self):
        self.stage_widths = tuple(int(c) for c in self.stage_widths)
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        if len(self.stage_widths) != 4 or len(self.stage_depths) != 4:
            raise ValueError("encoder needs exactly 4 stage widths and depths")
        if min(self.stage_widths) <= 0 or min(self.stage_depths) < 0 or self.align_dim <= 0:
            raise ValueError("encoder widths/depths must be positive")


@dataclass
class FamConfig:
    dw_kernel: int = 9
    enable_spatial: bool = True
    enable_class: bool = True
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.dw_kernel not in (7, 9, 11):
            raise ValueError(f"dw_kernel must be one of 7, 9, 11, got {self.dw_kernel}")


@dataclass
class DecoderConfig:
    dim: int = 32  # D, channel width of every decoder feature
    layers: int = 3
    skip_reduction: int = 16
    cost_kernel: int = 3

    def __post_init__(self):
        if self.layers not in (1, 2, 3):
            raise ValueError(f"decoder layers must be 1, 2 or 3, got {self.layers}")


@dataclass
class CerConfig:
    k: int | None = None  # None means ALL
    enabled: bool = False

    @staticmethod
    def parse_k(text: str | int | None) -> int | None:
        if text is None:
            return None
        if isinstance(text, str) and text.lower() == "all":
            return None
        k = int(text)
        if k < 1:
            raise ValueError(f"cer k must be >= 1 or 'all', got {k}")
        return k


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    fam: FamConfig = field(default_factory=FamConfig)
    num_templates: int = 4  # P

    @property
    def text_dim(self) -> int:
        return self.encoder.align_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(**d.get("encoder", {})),
            decoder=DecoderConfig(**d.get("decoder", {})),
            fam=FamConfig(**d.get("fam", {})),
            num_templates=d.get("num_templates", 4),
        )


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-4
    encoder_lr_scale: float = 0.01  # lambda
    iters: int = 1000
    batch: int = 1
    crop: int = 128
    seed: int = 0
    aux_loss_weight: float = 1.0
    checkpoint_every: int = 0  # 0: only at the end
    vocab_sample: int = 0  # >0: categories per step (present ones plus random negatives)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr <= 0 or self.iters < 0 or self.batch <= 0 or self.weight_decay < 0:
            raise ValueError("train config values must be positive")
        if not 0 < self.encoder_lr_scale <= 1:
            raise ValueError(f"encoder_lr_scale must be in (0, 1], got {self.encoder_lr_scale}")
        if self.crop <= 0 or self.crop % 32:
            raise ValueError(f"crop must be a positive multiple of 32, got {self.crop}")


def load_config(path: str | Path | None) -> tuple[ModelConfig, TrainConfig, CerConfig]:
    d = json.loads(Path(path).read_text()) if path else {}
    model = ModelConfig.from_dict(d)
    train = TrainConfig(**d.get("train", {}))
    cer = CerConfig(**d.get("cer", {}))
    return model, train, cer


def dump_config(model: ModelConfig, train: TrainConfig | None = None, cer: CerConfig | None = None) -> dict:
    d = model.to_dict()
    if train is not None:
        d["train"] = dataclasses.asdict(train)
    if cer is not None:
        d["cer"] = dataclasses.asdict(cer)
    return d
