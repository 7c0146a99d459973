"""Samples, dataset directories and synthetic scene generators.

Dataset directory layout::

    images/XXXX.ppm
    labels/XXXX.pgm   (or XXXX.sedl when there are more than 255 categories)
    categories.txt    one name per line
    templates.txt     one template per line with a '{}' placeholder
    embeddings.sede   optional; used instead of the synthetic text provider
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import read_label, read_ppm, write_label, write_ppm
from .losses import IGNORE_INDEX
from .text import DEFAULT_TEMPLATES, CategoryVocabulary, read_templates, write_embeddings, write_templates


@dataclass
class Sample:
    image: np.ndarray  # uint8 [H, W, 3]
    label: np.ndarray  # uint16 [H, W], IGNORE_INDEX marks unlabeled pixels
    name: str = ""

    def __post_init__(self):
        if self.image.shape[:2] != self.label.shape:
            raise ValueError(f"sample {self.name!r}: image {self.image.shape} and label {self.label.shape} differ")

    def validate(self, num_classes: int) -> None:
        bad = (self.label >= num_classes) & (self.label != IGNORE_INDEX)
        if bad.any():
            raise ValueError(f"sample {self.name!r}: label value {int(self.label[bad][0])} >= N={num_classes}")


@dataclass
class Dataset:
    samples: list[Sample]
    vocab: CategoryVocabulary
    templates: list[str]
    embeddings_path: Path | None = None

    def __len__(self) -> int:
        return len(self.samples)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    vocab = CategoryVocabulary.from_file(root / "categories.txt")
    tpath = root / "templates.txt"
    templates = read_templates(tpath) if tpath.exists() else list(DEFAULT_TEMPLATES)
    samples = []
    for img_path in sorted((root / "images").glob("*.ppm")):
        stem = img_path.stem
        candidates = [root / "labels" / f"{stem}.pgm", root / "labels" / f"{stem}.sedl"]
        label_path = next((c for c in candidates if c.exists()), None)
        if label_path is None:
            raise FileNotFoundError(f"no label file for {img_path}")
        s = Sample(read_ppm(img_path), read_label(label_path), stem)
        s.validate(len(vocab))
        samples.append(s)
    if not samples:
        raise FileNotFoundError(f"{root}: no images/*.ppm found")
    emb = root / "embeddings.sede"
    return Dataset(samples, vocab, templates, emb if emb.exists() else None)


def save_dataset(root: str | Path, ds: Dataset, embeddings: np.ndarray | None = None) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    (root / "categories.txt").write_text("".join(n + "\n" for n in ds.vocab.names), encoding="utf-8")
    write_templates(root / "templates.txt", ds.templates)
    for i, s in enumerate(ds.samples):
        name = s.name or f"{i:04d}"
        write_ppm(root / "images" / f"{name}.ppm", s.image)
        write_label(root / "labels" / f"{name}", s.label, len(ds.vocab))
    if embeddings is not None:
        write_embeddings(root / "embeddings.sede", embeddings)


def random_crop(sample: Sample, crop: int, rng: np.random.Generator) -> Sample:
    H, W = sample.label.shape
    if H < crop or W < crop:
        raise ValueError(f"sample {sample.name!r} ({H}x{W}) is smaller than crop {crop}")
    y = int(rng.integers(0, H - crop + 1))
    x = int(rng.integers(0, W - crop + 1))
    return Sample(sample.image[y : y + crop, x : x + crop], sample.label[y : y + crop, x : x + crop], sample.name)


# -- synthetic scenes ----------------------------------------------------
def palette(n: int, seed: int = 0) -> np.ndarray:
    """``n`` well-separated RGB colours (greedy farthest-point over a grid)."""
    levels = np.linspace(20, 235, 6)
    grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), -1).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(grid)))]
    dist = np.linalg.norm(grid - grid[chosen[0]], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(grid - grid[nxt], axis=1))
    return grid[chosen]


def make_block_dataset(
    num_images: int = 8,
    num_classes: int = 4,
    size: int = 64,
    cell: int = 32,
    noise: float = 8.0,
    seed: int = 0,
) -> Dataset:
    """Images tiled by ``cell x cell`` blocks, each block one flat class colour plus noise."""
    rng = np.random.default_rng(seed)
    colors = palette(num_classes, seed)
    samples = []
    g = size // cell
    for i in range(num_images):
        cls = rng.integers(0, num_classes, size=(g, g))
        label = np.kron(cls, np.ones((cell, cell), dtype=np.int64)).astype(np.uint16)
        img = colors[label] + rng.normal(0, noise, size=(size, size, 3))
        samples.append(Sample(np.clip(img, 0, 255).astype(np.uint8), label, f"{i:04d}"))
    vocab = CategoryVocabulary(tuple(f"class{c}" for c in range(num_classes)))
    return Dataset(samples, vocab, list(DEFAULT_TEMPLATES))


@dataclass
class QuadrantWorld:
    """Synthetic open-vocabulary world.

    Category ``c`` looks like a cell split into 2x2 quadrants, each painted
    with a colour from a ternary palette; its signature ``s_c`` (12 values in
    {-1, 0, 1}) is those four colours. Its text embedding is ``A s_c`` plus a
    small per-template perturbation, with ``A`` a fixed random orthonormal
    ``D_t x 12`` map, so recognising a category amounts to reading the
    quadrant colours back out of the image.
    """

    signatures: np.ndarray  # [N, 12]
    embeddings: np.ndarray  # [N, P, D_t]
    cell: int = 32

    @property
    def num_categories(self) -> int:
        return len(self.signatures)

    @classmethod
    def build(cls, n: int = 847, dim: int = 64, P: int = 4, min_distance: int = 3,
              template_noise: float = 0.05, seed: int = 0) -> "QuadrantWorld":
        rng = np.random.default_rng(seed)
        sigs: list[np.ndarray] = []
        tries = 0
        while len(sigs) < n:
            cand = rng.integers(-1, 2, size=12)
            tries += 1
            if tries > 200 * n:
                raise RuntimeError("could not place enough separated signatures")
            if not np.any(cand):
                continue
            if sigs and (np.asarray(sigs) != cand).sum(axis=1).min() < min_distance:
                continue
            sigs.append(cand)
        S = np.asarray(sigs, dtype=np.float64)
        A, _ = np.linalg.qr(rng.standard_normal((dim, 12)))
        base = S @ A.T  # [N, D_t]
        E = base[:, None, :] + template_noise * np.linalg.norm(base, axis=-1)[:, None, None] * rng.standard_normal(
            (n, P, dim)
        ) / np.sqrt(dim)
        E /= np.linalg.norm(E, axis=-1, keepdims=True)
        return cls(S, E.astype(np.float32))

    def vocab(self) -> CategoryVocabulary:
        return CategoryVocabulary(tuple(f"thing{c:04d}" for c in range(self.num_categories)))

    def render_cell(self, c: int) -> np.ndarray:
        half = self.cell // 2
        q = 127.5 + 100.0 * self.signatures[c].reshape(2, 2, 3)
        return np.kron(q, np.ones((half, half, 1)))

    def scene(self, rng: np.random.Generator, size: int = 128, max_present: int = 20,
              noise: float = 6.0, name: str = "") -> Sample:
        g = size // self.cell
        n_present = int(rng.integers(2, min(max_present, g * g) + 1))
        present = rng.choice(self.num_categories, size=n_present, replace=False)
        layout = rng.choice(present, size=(g, g))
        layout.reshape(-1)[: n_present] = present  # every chosen category appears
        layout = layout.reshape(-1)[rng.permutation(g * g)].reshape(g, g)
        img = np.zeros((size, size, 3))
        for r in range(g):
            for col in range(g):
                img[r * self.cell : (r + 1) * self.cell, col * self.cell : (col + 1) * self.cell] = self.render_cell(
                    int(layout[r, col])
                )
        img += rng.normal(0, noise, size=img.shape)
        label = np.kron(layout, np.ones((self.cell, self.cell), dtype=np.int64)).astype(np.uint16)
        return Sample(np.clip(img, 0, 255).astype(np.uint8), label, name)

    def dataset(self, num_images: int, size: int = 128, max_present: int = 20, seed: int = 0) -> Dataset:
        rng = np.random.default_rng(seed)
        samples = [self.scene(rng, size, max_present, name=f"{i:04d}") for i in range(num_images)]
        return Dataset(samples, self.vocab(), list(DEFAULT_TEMPLATES[: self.embeddings.shape[1]]))
