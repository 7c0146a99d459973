"""AdamW with a learning-rate scale for the encoder parameter group."""

from __future__ import annotations

import numpy as np

from .params import ParamSet


class AdamW:
    """Decoupled-weight-decay Adam.

    Encoder parameters use ``lr * encoder_lr_scale``; decoder and aux
    parameters use ``lr``. Moments live in the parameter dtype.
    """

    def __init__(
        self,
        params: ParamSet,
        lr: float = 2e-4,
        weight_decay: float = 1e-4,
        encoder_lr_scale: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.encoder_lr_scale = encoder_lr_scale
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    @classmethod
    def from_config(cls, params: ParamSet, cfg) -> "AdamW":
        return cls(params, cfg.lr, cfg.weight_decay, cfg.encoder_lr_scale, cfg.betas, cfg.eps)

    def lr_for(self, name: str) -> float:
        if self.params.group(name) == "encoder":
            return self.lr * self.encoder_lr_scale
        return self.lr

    def step(self) -> None:
        missing = [n for n, t in self.params.items() if t.grad is None]
        if missing:
            raise RuntimeError(f"AdamW: parameter {missing[0]!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            lr = self.lr_for(name)
            dtype = p.data.dtype
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            decayed = p.data * dtype.type(1.0 - lr * self.weight_decay)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (decayed - lr * update).astype(dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        out = {"optim.step": np.array([self.step_count], dtype=np.float32)}
        for n in self.params:
            out[f"optim.m.{n}"] = self.m[n]
            out[f"optim.v.{n}"] = self.v[n]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["optim.step"][0])
        for n, t in self.params.items():
            self.m[n] = state[f"optim.m.{n}"].astype(t.data.dtype)
            self.v[n] = state[f"optim.v.{n}"].astype(t.data.dtype)
