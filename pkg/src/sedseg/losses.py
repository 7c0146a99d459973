"""Segmentation loss: main cross-entropy plus weighted auxiliary terms."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor

IGNORE_INDEX = 65535


def seg_loss(
    main_logits: Tensor,
    aux_logits: list[Tensor],
    label: np.ndarray,
    aux_loss_weight: float = 1.0,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """``CE(main) + aux_loss_weight * sum_i CE(aux_i)``.

    Aux logits are bilinearly upsampled to the label extents first. Each CE
    term is averaged over the non-ignored pixels.
    """
    H, W = label.shape
    if main_logits.shape[:2] != (H, W):
        raise ShapeError(f"seg_loss: logits {main_logits.shape} vs label {label.shape}")
    loss = F.softmax_cross_entropy(main_logits, label, ignore_index)
    if aux_logits:  # kept at weight 0 so aux heads still receive (zero) gradients
        aux_total = None
        for a in aux_logits:
            term = F.softmax_cross_entropy(F.resize_bilinear(a, H, W), label, ignore_index)
            aux_total = term if aux_total is None else aux_total + term
        loss = loss + aux_total * aux_loss_weight
    return loss
