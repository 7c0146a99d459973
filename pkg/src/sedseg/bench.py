"""Inference, mIoU evaluation and the timing benchmark."""

from __future__ import annotations

import json
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig
from .data import Dataset
from .losses import IGNORE_INDEX
from .metrics import MIoUAccumulator, compute_miou
from .model import forward, image_tensor
from .params import ParamSet
from .tensor import ShapeError, no_grad
from .text import TextEmbeddings

STAGES = ("encoder", "cost_map", "decoder", "head")


@dataclass
class BenchReport:
    image: str
    k: str  # "all", "off" or the integer k
    stage_ms: dict[str, float]
    layer_ms: list[float]
    active_counts: list[int]
    end_to_end_ms: float
    miou: float | None = None
    runs: int = 1
    workers: dict[str, str] = field(default_factory=dict)

    def check(self, slack: float = 0.05) -> None:
        total = sum(self.stage_ms.values())
        if total > self.end_to_end_ms * (1 + slack):
            raise AssertionError(f"stage times {total:.3f} ms exceed end-to-end {self.end_to_end_ms:.3f} ms")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def worker_config() -> dict[str, str]:
    keys = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
    out = {k: os.environ.get(k, "") for k in keys}
    out["cpu_count"] = str(os.cpu_count())
    return out


def k_label(k: int | None, use_cer: bool) -> str:
    if not use_cer:
        return "off"
    return "all" if k is None else str(k)


def predict(
    image: np.ndarray,
    emb: TextEmbeddings,
    cfg: ModelConfig,
    params: ParamSet,
    k: int | None = None,
    use_cer: bool = False,
) -> tuple[np.ndarray, dict[str, float], list[int]]:
    """Per-pixel category map on the full vocabulary.

    Returns ``(labels, timings in seconds, active counts per layer)``; the
    timings include an ``end_to_end`` entry covering the whole call.
    """
    t0 = time.perf_counter()
    with no_grad():
        fo = forward(image_tensor(image, params.dtype), emb, cfg, params, cer_k=k, use_cer=use_cer)
        pred = fo.predict(emb.shape[0]).astype(np.uint16)
    timings = dict(fo.timings)
    timings["end_to_end"] = time.perf_counter() - t0
    counts = fo.cer.counts if fo.cer is not None else [emb.shape[0]] * cfg.decoder.layers
    return pred, timings, counts


def benchmark_image(
    image: np.ndarray,
    emb: TextEmbeddings,
    cfg: ModelConfig,
    params: ParamSet,
    k: int | None,
    use_cer: bool,
    name: str = "",
    label: np.ndarray | None = None,
    runs: int = 5,
    warmup: int = 2,
) -> tuple[np.ndarray, BenchReport]:
    """Time ``runs`` warm passes after ``warmup`` discarded ones.

    The report carries the stage breakdown of the run with the median
    end-to-end time, so its stage times always nest inside it.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    for _ in range(warmup):
        predict(image, emb, cfg, params, k, use_cer)
    results = [predict(image, emb, cfg, params, k, use_cer) for _ in range(runs)]
    order = sorted(range(runs), key=lambda i: results[i][1]["end_to_end"])
    pred, timings, counts = results[order[(runs - 1) // 2]]
    miou = None
    if label is not None:
        acc = MIoUAccumulator(emb.shape[0], IGNORE_INDEX)
        acc.update(pred, label)
        miou = compute_miou(acc)[0]
    n_layers = cfg.decoder.layers
    report = BenchReport(
        image=name,
        k=k_label(k, use_cer),
        stage_ms={s: 1e3 * timings[s] for s in STAGES},
        layer_ms=[1e3 * timings[f"decoder_layer{i}"] for i in range(1, n_layers + 1)],
        active_counts=list(counts),
        end_to_end_ms=1e3 * timings["end_to_end"],
        miou=miou,
        runs=runs,
        workers=worker_config(),
    )
    return pred, report


def evaluate(
    ds: Dataset,
    emb: TextEmbeddings,
    cfg: ModelConfig,
    params: ParamSet,
    k: int | None = None,
    use_cer: bool = False,
) -> tuple[float, np.ndarray, MIoUAccumulator]:
    """Dataset mIoU from one pass per image (full images, no cropping)."""
    n = len(ds.vocab)
    if emb.shape[0] != n:
        raise ShapeError(f"embeddings have {emb.shape[0]} categories, vocabulary has {n}")
    acc = MIoUAccumulator(n, IGNORE_INDEX)
    for s in ds.samples:
        pred, _, _ = predict(s.image, emb, cfg, params, k, use_cer)
        acc.update(pred, s.label)
    miou, per_class = compute_miou(acc)
    return miou, per_class, acc


def summarize(reports: list[BenchReport]) -> dict[str, float]:
    return {
        "decoder_ms": statistics.median(r.stage_ms["decoder"] for r in reports),
        "end_to_end_ms": statistics.median(r.end_to_end_ms for r in reports),
    }
