"""End-to-end segmentation network: encoder, cost map, decoder, heads."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cer import CerState, scatter_back
from .config import ModelConfig
from .cost_map import CostMap, compute_cost_map, embed_cost, init_cost_embed_params
from .decoder import GfdOutput, gfd_forward, init_decoder_params, output_head
from .encoder import PyramidFeatures, encode, init_encoder_params
from .params import ParamSet
from .tensor import ShapeError, Tensor
from .text import TextEmbeddings


@dataclass
class ForwardOutput:
    logits: Tensor  # [H, W, N_l] over the surviving categories
    aux_logits: list[Tensor]
    pyramid: PyramidFeatures
    cost: CostMap
    gfd: GfdOutput
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def cer(self) -> CerState | None:
        return self.gfd.cer

    def full_logits(self, n: int) -> np.ndarray:
        """Logits on the full category axis (rejected categories hold the sentinel)."""
        if self.cer is None:
            return self.logits.data
        return scatter_back(self.logits, self.cer, n)

    def predict(self, n: int) -> np.ndarray:
        return np.argmax(self.full_logits(n), axis=-1)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamSet:
    rng = np.random.default_rng(seed)
    params = ParamSet(dtype)
    init_encoder_params(params, cfg.encoder, rng)
    init_cost_embed_params(params, cfg.num_templates, cfg.decoder.dim, cfg.decoder.cost_kernel, rng)
    w = cfg.encoder.stage_widths
    init_decoder_params(params, cfg.decoder, cfg.fam, [w[2], w[1], w[0]], cfg.num_templates, rng)
    return params


def image_tensor(image: np.ndarray, dtype=np.float32) -> Tensor:
    """``uint8 [H, W, 3]`` -> values in [0, 1]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be [H, W, 3], got {image.shape}")
    arr = image.astype(dtype) / 255.0 if image.dtype == np.uint8 else image.astype(dtype)
    return Tensor(arr)


def forward(
    image: Tensor,
    emb: TextEmbeddings,
    cfg: ModelConfig,
    params: ParamSet,
    cer_k: int | None = None,
    use_cer: bool = False,
) -> ForwardOutput:
    if emb.shape[1] != cfg.num_templates or emb.shape[2] != cfg.text_dim:
        raise ShapeError(
            f"text embeddings {emb.shape} do not match model (P={cfg.num_templates}, D_t={cfg.text_dim})"
        )
    H, W = image.shape[:2]
    timings = {}
    t0 = time.perf_counter()
    pyr = encode(image, cfg.encoder, params)
    t1 = time.perf_counter()
    cv = compute_cost_map(pyr.Fv, emb)
    dec_in = embed_cost(cv, params)
    t2 = time.perf_counter()
    gfd = gfd_forward(dec_in, pyr, cv, params, cfg.decoder, cfg.fam, cer_k=cer_k, use_cer=use_cer)
    t3 = time.perf_counter()
    logits = output_head(gfd.F_h, params, H, W)
    t4 = time.perf_counter()
    timings.update(encoder=t1 - t0, cost_map=t2 - t1, decoder=t3 - t2, head=t4 - t3)
    for i, t in enumerate(gfd.layer_times, 1):
        timings[f"decoder_layer{i}"] = t
    return ForwardOutput(logits, gfd.aux_logits, pyr, cv, gfd, timings)
