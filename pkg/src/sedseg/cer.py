"""Category early rejection: top-k union selection, pruning and scatter-back."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, take


@dataclass
class CerState:
    """Tracks which original categories are still alive in the decoder.

    ``active[i]`` is the original index of the category at position ``i`` of
    the current N axis, so it doubles as the scatter map.
    """

    active: np.ndarray
    per_layer_selected: list[np.ndarray] = field(default_factory=list)
    fallbacks: int = 0

    @classmethod
    def full(cls, n: int) -> "CerState":
        return cls(np.arange(n, dtype=np.int64))

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.per_layer_selected]


def select_topk_union(logits: np.ndarray | Tensor, k: int | None) -> np.ndarray:
    """Union over pixels of each pixel's ``k`` highest-scoring categories.

    ``logits`` is ``[H, W, N]``; returns sorted local indices. Ties go to
    the lower index. ``k=None`` selects everything.
    """
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    n = arr.shape[-1]
    if k is None:
        return np.arange(n, dtype=np.int64)
    if not 1 <= k <= n:
        raise ValueError(f"top-k: k={k} outside [1, {n}]")
    if k == n:
        return np.arange(n, dtype=np.int64)
    flat = arr.reshape(-1, n)
    order = np.argsort(-flat, axis=-1, kind="stable")[:, :k]
    return np.unique(order)


def prune(
    feat: Tensor,
    cost: Tensor,
    selected: np.ndarray,
    state: CerState,
    fallback_logits: np.ndarray | None = None,
) -> tuple[Tensor, Tensor, CerState]:
    """Keep only ``selected`` (local indices) on axis 2 of ``feat`` and ``cost``.

    An empty selection keeps the single category with the largest response
    in ``fallback_logits`` (or local index 0) and counts a fallback.
    """
    n_local = feat.shape[2]
    if cost.shape[2] != n_local or len(state.active) != n_local:
        raise ShapeError(f"prune: category axes differ, features {feat.shape}, cost {cost.shape}, active {len(state.active)}")
    selected = np.unique(np.asarray(selected, dtype=np.int64))
    fallbacks = state.fallbacks
    if selected.size == 0:
        fallbacks += 1
        if fallback_logits is not None:
            best = int(np.argmax(np.asarray(fallback_logits).reshape(-1, n_local).max(axis=0)))
        else:
            best = 0
        selected = np.array([best], dtype=np.int64)
    if selected[0] < 0 or selected[-1] >= n_local:
        raise ValueError(f"prune: selection outside [0, {n_local})")
    history = state.per_layer_selected + [state.active[selected]]
    if selected.size == n_local:
        return feat, cost, CerState(state.active, history, fallbacks)
    new_state = CerState(state.active[selected], history, fallbacks)
    return take(feat, selected, axis=2), take(cost, selected, axis=2), new_state


def sentinel(dtype) -> float:
    return float(np.finfo(dtype).min)


def scatter_back(pruned: Tensor | np.ndarray, state: CerState, n: int) -> np.ndarray:
    """Place ``[H, W, N_final]`` logits on the full ``N`` axis; rejected slots get the most negative value."""
    arr = pruned.data if isinstance(pruned, Tensor) else np.asarray(pruned)
    if arr.shape[-1] != len(state.active):
        raise ShapeError(f"scatter_back: {arr.shape[-1]} logits for {len(state.active)} active categories")
    if len(state.active) and state.active[-1] >= n:
        raise ShapeError(f"scatter_back: active index {state.active[-1]} >= N={n}")
    if len(state.active) == n:
        return arr
    out = np.full(arr.shape[:-1] + (n,), sentinel(arr.dtype), dtype=arr.dtype)
    out[..., state.active] = arr
    return out
