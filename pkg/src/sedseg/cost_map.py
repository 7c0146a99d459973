"""Pixel-level image-text cost map and its decoder embedding."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import functional as F
from .params import ParamSet, uniform_init
from .tensor import ShapeError, Tensor, matmul
from .text import TextEmbeddings

NORM_EPS = 1e-8
COST_MAGIC = b"SEDV"


@dataclass
class CostMap:
    F_cv: Tensor  # [H_v, W_v, N, P], cosine similarities
    degenerate: int = 0  # vectors whose norm was clamped to NORM_EPS

    @property
    def shape(self):
        return self.F_cv.shape


@dataclass
class DecoderInput:
    F_dec: Tensor  # [H_v, W_v, N, D]

    @property
    def dim(self) -> int:
        return self.F_dec.shape[-1]


def compute_cost_map(Fv: Tensor, emb: TextEmbeddings) -> CostMap:
    """Cosine similarity between every visual vector ``Fv[i, j]`` and text vector ``E[n, p]``."""
    E = emb.E.data
    if Fv.ndim != 3 or E.ndim != 3 or Fv.shape[-1] != E.shape[-1]:
        raise ShapeError(f"cost map: visual {Fv.shape} and text {E.shape} widths differ")
    Hv, Wv, Dt = Fv.shape
    N, P, _ = E.shape
    fn, n_vis = F.l2_normalize(Fv, NORM_EPS)
    e_norm = np.sqrt((E.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    n_txt = int((e_norm < NORM_EPS).sum())
    en = (E / np.maximum(e_norm, NORM_EPS)).astype(Fv.dtype)
    flat = matmul(fn.reshape(Hv * Wv, Dt), Tensor(np.ascontiguousarray(en.reshape(N * P, Dt).T)))
    return CostMap(flat.reshape(Hv, Wv, N, P), degenerate=n_vis + n_txt)


def init_cost_embed_params(params: ParamSet, P: int, D: int, kernel: int, rng: np.random.Generator) -> None:
    fan = kernel * kernel * P
    params.add("decoder.cost_embed.w", uniform_init(rng, (kernel, kernel, P, D), fan), "decoder")
    params.add("decoder.cost_embed.b", np.zeros(D), "decoder")


def embed_cost(cv: CostMap, params: ParamSet) -> DecoderInput:
    """Shared 'same' conv over (H_v, W_v) per category, P -> D channels, then GeLU."""
    w = params["decoder.cost_embed.w"]
    k = w.shape[0]
    x = F.conv2d(cv.F_cv, w, params["decoder.cost_embed.b"], stride=1, pad=(k - 1) // 2)
    return DecoderInput(F.gelu(x))


def write_cost_map(path: str | Path, cv: CostMap | np.ndarray) -> None:
    arr = cv.F_cv.data if isinstance(cv, CostMap) else np.asarray(cv)
    if arr.ndim != 4:
        raise ShapeError(f"cost map must have 4 axes, got {arr.shape}")
    Path(path).write_bytes(COST_MAGIC + struct.pack("<4I", *arr.shape) + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_cost_map(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != COST_MAGIC:
        raise ValueError(f"{path}: not a SEDV cost-map dump")
    shape = struct.unpack_from("<4I", raw, 4)
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(shape).astype(np.float32)
