"""Hierarchical ConvNeXt-style image encoder.

Produces the stride 4/8/16/32 pyramid and the text-aligned map ``Fv``
(an MLP on the stride-32 level). Layout is ``[H, W, C]`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .config import EncoderConfig
from .params import ParamSet, uniform_init
from .tensor import ShapeError, Tensor

PATCH = 4


@dataclass
class PyramidFeatures:
    F2: Tensor  # [H/4, W/4, C2]
    F3: Tensor  # [H/8, W/8, C3]
    F4: Tensor  # [H/16, W/16, C4]
    F5: Tensor  # [H/32, W/32, C5]
    Fv: Tensor  # [H/32, W/32, D_t]

    def skips(self) -> list[Tensor]:
        """Skip inputs in decoder order (coarse to fine)."""
        return [self.F4, self.F3, self.F2]


def check_image_extents(H: int, W: int) -> None:
    if H <= 0 or W <= 0 or H % 32 or W % 32:
        raise ShapeError(f"image extents {H}x{W} must be positive multiples of 32")


def init_encoder_params(params: ParamSet, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    widths = cfg.stage_widths
    k = cfg.block_kernel
    fan = PATCH * PATCH * 3
    params.add("encoder.stem.w", uniform_init(rng, (fan, widths[0]), fan), "encoder")
    params.add("encoder.stem.b", np.zeros(widths[0]), "encoder")
    params.add("encoder.stem.ln.g", np.ones(widths[0]), "encoder")
    params.add("encoder.stem.ln.b", np.zeros(widths[0]), "encoder")
    for s, (c, depth) in enumerate(zip(widths, cfg.stage_depths)):
        if s > 0:
            cin = widths[s - 1]
            pre = f"encoder.down{s}"
            params.add(f"{pre}.ln.g", np.ones(cin), "encoder")
            params.add(f"{pre}.ln.b", np.zeros(cin), "encoder")
            params.add(f"{pre}.w", uniform_init(rng, (3, 3, cin, c), 9 * cin), "encoder")
            params.add(f"{pre}.b", np.zeros(c), "encoder")
        hidden = cfg.mlp_ratio * c
        for j in range(depth):
            pre = f"encoder.stage{s}.block{j}"
            params.add(f"{pre}.dw.w", uniform_init(rng, (k, k, c), k * k), "encoder")
            params.add(f"{pre}.dw.b", np.zeros(c), "encoder")
            params.add(f"{pre}.ln.g", np.ones(c), "encoder")
            params.add(f"{pre}.ln.b", np.zeros(c), "encoder")
            params.add(f"{pre}.fc1.w", uniform_init(rng, (c, hidden), c), "encoder")
            params.add(f"{pre}.fc1.b", np.zeros(hidden), "encoder")
            params.add(f"{pre}.fc2.w", uniform_init(rng, (hidden, c), hidden), "encoder")
            params.add(f"{pre}.fc2.b", np.zeros(c), "encoder")
    c5, dt = widths[3], cfg.align_dim
    params.add("encoder.align.fc1.w", uniform_init(rng, (c5, dt), c5), "encoder")
    params.add("encoder.align.fc1.b", np.zeros(dt), "encoder")
    params.add("encoder.align.fc2.w", uniform_init(rng, (dt, dt), dt), "encoder")
    params.add("encoder.align.fc2.b", np.zeros(dt), "encoder")


def patchify(x: Tensor, w: Tensor, b: Tensor, patch: int = PATCH) -> Tensor:
    """Non-overlapping ``patch x patch`` stride-``patch`` convolution as reshape + linear."""
    H, W, C = x.shape
    t = x.reshape(H // patch, patch, W // patch, patch, C).transpose(0, 2, 1, 3, 4)
    t = t.reshape(H // patch, W // patch, patch * patch * C)
    return F.linear(t, w, b)


def _block(x: Tensor, params: ParamSet, pre: str) -> Tensor:
    y = F.depthwise_conv2d(x, params[f"{pre}.dw.w"], params[f"{pre}.dw.b"])
    y = F.layer_norm(y, params[f"{pre}.ln.g"], params[f"{pre}.ln.b"])
    y = F.gelu(F.linear(y, params[f"{pre}.fc1.w"], params[f"{pre}.fc1.b"]))
    y = F.linear(y, params[f"{pre}.fc2.w"], params[f"{pre}.fc2.b"])
    return x + y


def encode(image: Tensor, cfg: EncoderConfig, params: ParamSet) -> PyramidFeatures:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be [H, W, 3], got {image.shape}")
    check_image_extents(*image.shape[:2])
    x = patchify(image, params["encoder.stem.w"], params["encoder.stem.b"])
    x = F.layer_norm(x, params["encoder.stem.ln.g"], params["encoder.stem.ln.b"])
    levels = []
    for s, depth in enumerate(cfg.stage_depths):
        if s > 0:
            pre = f"encoder.down{s}"
            x = F.layer_norm(x, params[f"{pre}.ln.g"], params[f"{pre}.ln.b"])
            x = F.conv2d(x, params[f"{pre}.w"], params[f"{pre}.b"], stride=2, pad=1)
        for j in range(depth):
            x = _block(x, params, f"encoder.stage{s}.block{j}")
        levels.append(x)
    fv = F.gelu(F.linear(levels[3], params["encoder.align.fc1.w"], params["encoder.align.fc1.b"]))
    fv = F.linear(fv, params["encoder.align.fc2.w"], params["encoder.align.fc2.b"])
    return PyramidFeatures(*levels, Fv=fv)
