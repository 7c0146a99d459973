from contextlib import contextmanager

import numpy as np
import pytest

from sedseg.config import DecoderConfig, EncoderConfig, FamConfig, ModelConfig
from sedseg.tensor import Tensor

SEEDS = (0, 1, 2)
FD_TOL = 1e-4


def tiny_model_config(layers: int = 3, **fam) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(stage_widths=(4, 8, 8, 16), stage_depths=(1, 1, 1, 1), align_dim=8),
        decoder=DecoderConfig(dim=4, layers=layers),
        fam=FamConfig(dw_kernel=7, **fam),
        num_templates=2,
    )


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-3, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``arr`` (mutated in place and restored).

    Two step sizes are combined by Richardson extrapolation,
    ``(4 D(h/2) - D(h)) / 3``, which cancels the O(h^2) truncation term while
    keeping ``h`` large enough that roundoff stays negligible.
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)

    def central(i, step):
        old = flat[i]
        flat[i] = old + step
        up = fn()
        flat[i] = old - step
        down = fn()
        flat[i] = old
        return (up - down) / (2 * step)

    for i in range(flat.size) if indices is None else indices:
        gflat[i] = (4 * central(i, h / 2) - central(i, h)) / 3
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, scale: float = 0.0) -> float:
    """Max-norm error relative to the larger of the two gradients (or ``scale``)."""
    scale = max(np.abs(a).max(), np.abs(b).max(), scale, 1e-8)
    return float(np.abs(a - b).max() / scale)


def check_grads(
    loss_fn,
    tensors: list[Tensor],
    h: float = 1e-3,
    max_entries: int | None = None,
    rng=None,
    floor: float = 1e-4,
) -> float:
    """Worst relative error between autograd and central differences over ``tensors``.

    Each tensor's error is divided by its largest analytic gradient, but never
    by less than ``floor`` times the largest gradient over all ``tensors``.
    The floor keeps exactly-zero gradients (e.g. a bias that shifts every
    category's logit equally) from turning roundoff into a huge ratio.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    global_scale = max(float(np.abs(g).max()) for g in analytic)
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(t.size, size=max_entries, replace=False)
        gn = numeric_grad(lambda: float(loss_fn().data), t.data, h, idx)
        scale = max(float(np.abs(ga).max()), floor * global_scale)
        if idx is not None:
            ga = ga.reshape(-1)[idx]
            gn = gn.reshape(-1)[idx]
        worst = max(worst, rel_error(ga, gn, scale))
    return worst


@contextmanager
def frozen_detach():
    """Make detached values constants for finite differences.

    Inside the block, wrap a loss function with the yielded callable. Its
    first call records every ``detach()`` result; later calls replay those
    values in order, so perturbing a parameter cannot leak through a path
    that autograd deliberately cuts.
    """
    original = Tensor.detach
    recorded: list[np.ndarray] = []
    cursor = [0]
    replay = [False]

    def detach(self):
        if replay[0]:
            value = recorded[cursor[0]]
            cursor[0] += 1
            return Tensor(value)
        recorded.append(self.data.copy())
        return original(self)

    def wrap(loss_fn):
        def run():
            cursor[0] = 0
            out = loss_fn()
            replay[0] = True
            return out

        return run

    Tensor.detach = detach
    try:
        yield wrap
    finally:
        Tensor.detach = original


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()
