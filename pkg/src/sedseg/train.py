"""Training loop, checkpoints and text-embedding setup for datasets."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, dump_config
from .data import Dataset, Sample, random_crop
from .losses import IGNORE_INDEX, seg_loss
from .model import forward, image_tensor, init_params
from .optim import AdamW
from .params import ParamSet, load_checkpoint, save_checkpoint
from .tensor import ShapeError
from .text import FileProvider, SyntheticProvider, TextEmbeddings, embed_texts, expand_prompts

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.sedc"
CONFIG_NAME = "config.json"
LOSS_NAME = "loss.tsv"


def dataset_embeddings(
    ds: Dataset, cfg: ModelConfig, embeddings: str | Path | None = None, seed: int = 0
) -> TextEmbeddings:
    """Embeddings for ``ds.vocab`` x ``ds.templates``.

    An explicit file wins, then the dataset's own ``embeddings.sede``, then
    the synthetic hashing provider.
    """
    prompts = expand_prompts(ds.vocab, ds.templates)
    if prompts.num_templates != cfg.num_templates:
        raise ShapeError(f"{len(ds.templates)} templates given but the model expects P={cfg.num_templates}")
    path = embeddings or ds.embeddings_path
    provider = FileProvider(path, cfg.text_dim) if path else SyntheticProvider(cfg.text_dim, seed)
    return embed_texts(prompts, provider)


def sample_vocabulary(label: np.ndarray, n: int, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pick the categories present in ``label`` plus random negatives, ``size`` in total.

    Returns the sorted category indices and the label remapped onto them.
    """
    present = np.unique(label[label != IGNORE_INDEX]).astype(np.int64)
    chosen = present
    if size > len(present):
        pool = np.setdiff1d(np.arange(n), present)
        extra = rng.choice(pool, size=min(size - len(present), len(pool)), replace=False)
        chosen = np.concatenate([present, extra])
    chosen = np.sort(chosen)
    lut = np.full(max(n, 1), IGNORE_INDEX, dtype=np.int64)
    lut[chosen] = np.arange(len(chosen))
    remapped = np.where(label == IGNORE_INDEX, IGNORE_INDEX, lut[np.minimum(label, n - 1)])
    return chosen, remapped.astype(np.uint16)


@dataclass
class TrainState:
    params: ParamSet
    optim: AdamW
    losses: list[float] = field(default_factory=list)

    @property
    def iteration(self) -> int:
        return self.optim.step_count


def save_training_checkpoint(path: str | Path, state: TrainState) -> None:
    entries = dict(state.params.state())
    entries.update(state.optim.state())
    save_checkpoint(path, entries)


def load_model(checkpoint: str | Path, cfg: ModelConfig) -> ParamSet:
    """Parameters for ``cfg`` filled from a checkpoint (optimizer entries are ignored)."""
    params = init_params(cfg)
    state = load_checkpoint(checkpoint)
    try:
        params.load_state(state)
    except (KeyError, ValueError) as e:
        raise ValueError(f"{checkpoint}: {e.args[0]}") from None
    return params


def write_run_config(out_dir: Path, model_cfg: ModelConfig, train_cfg: TrainConfig, num_categories: int) -> None:
    d = dump_config(model_cfg, train_cfg)
    d["num_categories"] = num_categories
    (out_dir / CONFIG_NAME).write_text(json.dumps(d, indent=2) + "\n")


def train_step_sample(ds: Dataset, cfg: TrainConfig, it: int) -> tuple[list[Sample], np.random.Generator]:
    rng = np.random.default_rng([cfg.seed, it])
    idx = rng.integers(0, len(ds), size=cfg.batch)
    return [random_crop(ds.samples[i], cfg.crop, rng) for i in idx], rng


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    ds: Dataset,
    emb: TextEmbeddings,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    iters: int | None = None,
) -> TrainState:
    """Train for ``train_cfg.iters`` total iterations (or ``iters`` if given).

    Each iteration draws its batch, crops and sampled vocabulary from a
    generator seeded by ``(seed, iteration)``, so resuming from a checkpoint
    continues the exact same stream. Losses are appended to ``loss.tsv``.
    """
    n = len(ds.vocab)
    if emb.shape[0] != n:
        raise ShapeError(f"embeddings have {emb.shape[0]} categories, vocabulary has {n}")
    if n < 2 or train_cfg.vocab_sample == 1:
        raise ValueError("training needs at least 2 categories per step")
    for s in ds.samples:
        s.validate(n)
    params = init_params(model_cfg, seed=train_cfg.seed)
    optim = AdamW.from_config(params, train_cfg)
    state = TrainState(params, optim)
    if resume is not None:
        entries = load_checkpoint(resume)
        params.load_state(entries)
        optim.load_state(entries)
        log.info("resumed from %s at iteration %d", resume, optim.step_count)
    total = train_cfg.iters if iters is None else iters

    out = Path(out_dir) if out_dir is not None else None
    loss_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_run_config(out, model_cfg, train_cfg, n)
        loss_file = open(out / LOSS_NAME, "a" if resume is not None else "w")
    try:
        while optim.step_count < total:
            it = optim.step_count
            batch, rng = train_step_sample(ds, train_cfg, it)
            params.zero_grad()
            loss_sum = None
            for s in batch:
                e, label = emb, s.label
                if train_cfg.vocab_sample > 0:
                    cats, label = sample_vocabulary(s.label, n, train_cfg.vocab_sample, rng)
                    e = emb.subset(cats)
                if not np.any(label != IGNORE_INDEX):
                    raise ValueError(f"sample {s.name!r}: crop at iteration {it} has no labeled pixels")
                fo = forward(image_tensor(s.image, params.dtype), e, model_cfg, params)
                loss = seg_loss(fo.logits, fo.aux_logits, label, train_cfg.aux_loss_weight)
                loss_sum = loss if loss_sum is None else loss_sum + loss
            loss_sum = loss_sum * (1.0 / len(batch))
            loss_sum.backward()
            optim.step()
            value = float(loss_sum.data)
            state.losses.append(value)
            if loss_file is not None:
                loss_file.write(f"{it + 1}\t{value!r}\n")
                loss_file.flush()
            if out is not None and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
                save_training_checkpoint(out / f"checkpoint_{it + 1:06d}.sedc", state)
            if (it + 1) % 50 == 0:
                log.info("iter %d loss %.5f", it + 1, value)
    finally:
        if loss_file is not None:
            loss_file.close()
    if out is not None:
        save_training_checkpoint(out / CHECKPOINT_NAME, state)
    return state


def read_loss_curve(path: str | Path) -> list[tuple[int, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        it, v = line.split("\t")
        rows.append((int(it), float(v)))
    return rows
