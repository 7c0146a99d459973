"""Gradual fusion decoder: stacked FAM + SFM layers, output and auxiliary heads.

Decoder features are ``[H, W, N, D]``: spatial axes first, categories in
axis 2, channels last. Every weight is shared across categories, so the
decoder is equivariant to permutations of the category axis.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .cer import CerState, prune, select_topk_union
from .config import DecoderConfig, FamConfig
from .cost_map import CostMap, DecoderInput
from .encoder import PyramidFeatures
from .params import ParamSet, uniform_init
from .tensor import ShapeError, Tensor, broadcast_to, concat, elu, matmul

SKIP_LEVELS = ("F4", "F3", "F2")


def reduced_width(c_skip: int, factor: int) -> int:
    return max(1, c_skip // factor)


@dataclass
class GfdOutput:
    F_h: Tensor  # [H_out, W_out, N_l, D]
    aux_logits: list[Tensor]  # per layer, [H_l, W_l, N_l] before pruning at that layer
    cer: CerState | None = None
    layer_times: list[float] = field(default_factory=list)


def init_decoder_params(
    params: ParamSet,
    cfg: DecoderConfig,
    fam: FamConfig,
    skip_widths: list[int],
    P: int,
    rng: np.random.Generator,
) -> None:
    D = cfg.dim
    k = fam.dw_kernel
    hidden = fam.mlp_ratio * D
    for i in range(1, cfg.layers + 1):
        pre = f"decoder.layer{i}"
        if fam.enable_spatial:
            params.add(f"{pre}.fam.dw.w", uniform_init(rng, (k, k, D), k * k), "decoder")
            params.add(f"{pre}.fam.dw.b", np.zeros(D), "decoder")
            params.add(f"{pre}.fam.ln.g", np.ones(D), "decoder")
            params.add(f"{pre}.fam.ln.b", np.zeros(D), "decoder")
            params.add(f"{pre}.fam.fc1.w", uniform_init(rng, (D, hidden), D), "decoder")
            params.add(f"{pre}.fam.fc1.b", np.zeros(hidden), "decoder")
            params.add(f"{pre}.fam.fc2.w", uniform_init(rng, (hidden, D), hidden), "decoder")
            params.add(f"{pre}.fam.fc2.b", np.zeros(D), "decoder")
        if fam.enable_class:
            for proj in ("q", "k", "v"):
                params.add(f"{pre}.fam.attn.{proj}.w", uniform_init(rng, (D, D), D), "decoder")
                params.add(f"{pre}.fam.attn.{proj}.b", np.zeros(D), "decoder")
        c_skip = skip_widths[i - 1]
        cr = reduced_width(c_skip, cfg.skip_reduction)
        c_cat = D + cr + P
        params.add(f"{pre}.sfm.up.w", uniform_init(rng, (2, 2, D, D), D), "decoder")
        params.add(f"{pre}.sfm.up.b", np.zeros(D), "decoder")
        params.add(f"{pre}.sfm.skip.w", uniform_init(rng, (1, 1, c_skip, cr), c_skip), "decoder")
        params.add(f"{pre}.sfm.skip.b", np.zeros(cr), "decoder")
        params.add(f"{pre}.sfm.conv1.w", uniform_init(rng, (3, 3, c_cat, D), 9 * c_cat), "decoder")
        params.add(f"{pre}.sfm.conv1.b", np.zeros(D), "decoder")
        params.add(f"{pre}.sfm.conv2.w", uniform_init(rng, (3, 3, D, D), 9 * D), "decoder")
        params.add(f"{pre}.sfm.conv2.b", np.zeros(D), "decoder")
        params.add(f"aux.layer{i}.w", uniform_init(rng, (1, 1, D, 1), D), "aux")
        params.add(f"aux.layer{i}.b", np.zeros(1), "aux")
    params.add("decoder.head.w", uniform_init(rng, (1, 1, D, 1), D), "decoder")
    params.add("decoder.head.b", np.zeros(1), "decoder")


def class_attention(x: Tensor, params: ParamSet, pre: str) -> Tensor:
    """Linear self-attention across the category axis at every pixel, plus residual.

    With feature map ``phi(u) = elu(u) + 1`` the output for query token ``n`` is
    ``phi(q_n) (phi(K)^T V) / (phi(q_n) . sum_m phi(k_m))``, costing O(N D^2)
    instead of O(N^2 D).
    """
    v = F.linear(x, params[f"{pre}.v.w"], params[f"{pre}.v.b"])
    if x.shape[2] == 1:
        return v + x  # one token: the normalization cancels exactly
    q = F.linear(x, params[f"{pre}.q.w"], params[f"{pre}.q.b"])
    k = F.linear(x, params[f"{pre}.k.w"], params[f"{pre}.k.b"])
    fq = elu(q) + 1.0
    fk = elu(k) + 1.0
    kv = matmul(fk.transpose(0, 1, 3, 2), v)  # [H, W, D, D]
    num = matmul(fq, kv)  # [H, W, N, D]
    ksum = fk.sum(axis=2, keepdims=True).transpose(0, 1, 3, 2)  # [H, W, D, 1]
    den = matmul(fq, ksum)  # [H, W, N, 1]
    return num / den + x


def fam_forward(x: Tensor, cfg: FamConfig, params: ParamSet, layer: int) -> Tensor:
    pre = f"decoder.layer{layer}.fam"
    if cfg.enable_spatial:
        y = F.depthwise_conv2d(x, params[f"{pre}.dw.w"], params[f"{pre}.dw.b"])
        x = x + F.layer_norm(y, params[f"{pre}.ln.g"], params[f"{pre}.ln.b"])
        y = F.gelu(F.linear(x, params[f"{pre}.fc1.w"], params[f"{pre}.fc1.b"]))
        x = x + F.linear(y, params[f"{pre}.fc2.w"], params[f"{pre}.fc2.b"])
    if cfg.enable_class:
        x = class_attention(x, params, f"{pre}.attn")
    return x


def sfm_concat(x: Tensor, skip: Tensor, cost: Tensor, params: ParamSet, layer: int) -> Tensor:
    """The fused ``[2H, 2W, N, D + C_skip/16 + P]`` input of the SFM convolutions.

    ``skip`` and ``cost`` are detached here: no gradient reaches the encoder
    through this module. Channel order is
    ``[upsampled x (D) | reduced skip repeated per category | upsampled cost (P)]``.
    """
    pre = f"decoder.layer{layer}.sfm"
    H, W, N, D = x.shape
    if skip.shape[:2] != (2 * H, 2 * W):
        raise ShapeError(
            f"SFM layer {layer}: skip level {SKIP_LEVELS[layer - 1]} has extents {skip.shape[:2]}, "
            f"expected {(2 * H, 2 * W)}"
        )
    if cost.shape[2] != N:
        raise ShapeError(f"SFM layer {layer}: cost map has {cost.shape[2]} categories, features have {N}")
    up = F.transposed_conv2d(x, params[f"{pre}.up.w"], params[f"{pre}.up.b"])
    red = F.conv2d(skip.detach(), params[f"{pre}.skip.w"], params[f"{pre}.skip.b"])
    cr = red.shape[-1]
    red = broadcast_to(red.reshape(2 * H, 2 * W, 1, cr), (2 * H, 2 * W, N, cr))
    cv = F.resize_bilinear(cost.detach(), 2 * H, 2 * W)
    return concat([up, red, cv], axis=-1)


def sfm_forward(x: Tensor, skip: Tensor, cost: Tensor, params: ParamSet, layer: int) -> Tensor:
    """Upsample ``x`` by 2, fuse a skip level and the cost map, then two 3x3 convs."""
    pre = f"decoder.layer{layer}.sfm"
    cat = sfm_concat(x, skip, cost, params, layer)
    y = F.gelu(F.conv2d(cat, params[f"{pre}.conv1.w"], params[f"{pre}.conv1.b"], pad=1))
    return F.conv2d(y, params[f"{pre}.conv2.w"], params[f"{pre}.conv2.b"], pad=1)


def aux_head(feat: Tensor, params: ParamSet, layer: int) -> Tensor:
    """1x1 conv D -> 1 per category on a detached feature: ``[H, W, N, D] -> [H, W, N]``."""
    f = feat.detach()
    out = F.conv2d(f, params[f"aux.layer{layer}.w"], params[f"aux.layer{layer}.b"])
    return out.reshape(out.shape[:3])


def output_head(F_h: Tensor, params: ParamSet, out_h: int, out_w: int) -> Tensor:
    """Per-category 1x1 conv D -> 1, then bilinear upsampling to ``out_h x out_w``."""
    small = F.conv2d(F_h, params["decoder.head.w"], params["decoder.head.b"])
    small = small.reshape(small.shape[:3])
    return F.resize_bilinear(small, out_h, out_w)


def gfd_forward(
    dec_in: DecoderInput,
    pyr: PyramidFeatures,
    cv: CostMap,
    params: ParamSet,
    cfg: DecoderConfig,
    fam: FamConfig,
    cer_k: int | None = None,
    use_cer: bool = False,
) -> GfdOutput:
    """Run ``cfg.layers`` FAM+SFM layers (skips F4, F3, F2 in that order).

    Aux logits are read from each layer's input. With ``use_cer`` the union of
    per-pixel top-``cer_k`` aux categories is kept and everything else is
    dropped before that layer runs.
    """
    feat = dec_in.F_dec
    cost = cv.F_cv
    skips = pyr.skips()
    state = CerState.full(feat.shape[2]) if use_cer else None
    aux, times = [], []
    for i in range(1, cfg.layers + 1):
        t0 = time.perf_counter()
        logits = aux_head(feat, params, i)
        aux.append(logits)
        if use_cer:
            sel = select_topk_union(logits, None if cer_k is None else min(cer_k, feat.shape[2]))
            feat, cost, state = prune(feat, cost, sel, state, fallback_logits=logits.data)
        feat = fam_forward(feat, fam, params, i)
        feat = sfm_forward(feat, skips[i - 1], cost, params, i)
        times.append(time.perf_counter() - t0)
    return GfdOutput(feat, aux, state, times)
