"""Category vocabularies, prompt templates and frozen text embeddings.

The text tower is replaced by an embedding provider: either a SEDE file
(e.g. embeddings exported offline from a real text encoder) or a
deterministic synthetic provider that hashes each prompt string to a unit
vector.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor

PLACEHOLDER = "{}"
EMBEDDING_MAGIC = b"SEDE"

DEFAULT_TEMPLATES = [
    "a photo of a {}.",
    "a photo of many {}.",
    "a photo of the large {}.",
    "a photo of the small {}.",
]


@dataclass(frozen=True)
class CategoryVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ValueError("category vocabulary is empty")
        seen = set()
        for n in self.names:
            if n in seen:
                raise ValueError(f"duplicate category name {n!r}")
            seen.add(n)

    @classmethod
    def from_list(cls, names) -> "CategoryVocabulary":
        return cls(tuple(names))

    @classmethod
    def from_file(cls, path: str | Path) -> "CategoryVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class PromptSet:
    prompts: tuple[tuple[str, ...], ...]  # [N][P]

    @property
    def num_categories(self) -> int:
        return len(self.prompts)

    @property
    def num_templates(self) -> int:
        return len(self.prompts[0])

    def flat(self) -> list[str]:
        """Row-major by category."""
        return [s for row in self.prompts for s in row]


@dataclass
class TextEmbeddings:
    E: Tensor  # [N, P, D_t], never requires grad
    frozen: bool = True

    def __post_init__(self):
        if self.E.requires_grad:
            self.E = self.E.detach()

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.E.shape

    def subset(self, indices) -> "TextEmbeddings":
        return TextEmbeddings(Tensor(self.E.data[np.asarray(indices)]))


def read_templates(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.rstrip("\n") for line in lines if line.strip()]


def write_templates(path: str | Path, templates: list[str]) -> None:
    Path(path).write_text("".join(t + "\n" for t in templates), encoding="utf-8")


def expand_prompts(vocab: CategoryVocabulary, templates: list[str]) -> PromptSet:
    if not templates:
        raise ValueError("template list is empty")
    for i, t in enumerate(templates):
        count = t.count(PLACEHOLDER)
        if count != 1:
            raise ValueError(f"template {i} ({t!r}) must contain exactly one '{{}}' placeholder, found {count}")
    return PromptSet(tuple(tuple(t.replace(PLACEHOLDER, name) for t in templates) for name in vocab.names))


class SyntheticProvider:
    """Hash each prompt (with ``seed``) into ``dim`` Gaussian values, then L2-normalize."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def vector(self, prompt: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{prompt}".encode("utf-8")).digest()
        rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint32))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed(self, prompts: PromptSet) -> np.ndarray:
        flat = np.stack([self.vector(s) for s in prompts.flat()])
        return flat.reshape(prompts.num_categories, prompts.num_templates, self.dim)


class FileProvider:
    """Serve embeddings stored in a SEDE file; dimensions must match the prompt set."""

    def __init__(self, path: str | Path, dim: int | None = None):
        self.path = Path(path)
        self.dim = dim

    def embed(self, prompts: PromptSet) -> np.ndarray:
        E = read_embeddings(self.path)
        n, p, d = E.shape
        want = (prompts.num_categories, prompts.num_templates)
        if (n, p) != want:
            raise ShapeError(f"{self.path}: expected N*P = {want[0]}x{want[1]} rows, found {n}x{p}")
        if self.dim is not None and d != self.dim:
            raise ShapeError(f"{self.path}: expected D_t = {self.dim}, found {d}")
        return E


def embed_texts(prompts: PromptSet, provider, dtype=np.float32) -> TextEmbeddings:
    E = np.asarray(provider.embed(prompts), dtype=dtype)
    return TextEmbeddings(Tensor(E))


def write_embeddings(path: str | Path, E: np.ndarray) -> None:
    E = np.asarray(E)
    if E.ndim != 3:
        raise ShapeError(f"embeddings must be [N, P, D_t], got {E.shape}")
    header = EMBEDDING_MAGIC + struct.pack("<III", *E.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(E, dtype="<f4").tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: not a SEDE embedding file")
    n, p, d = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * n * p * d
    if len(raw) != expected:
        raise ShapeError(f"{path}: expected {expected} bytes for {n}x{p}x{d}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, p, d).astype(np.float32)
