"""Named parameter store and the SEDC checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

GROUPS = ("encoder", "decoder", "aux")

CHECKPOINT_MAGIC = b"SEDC"
CHECKPOINT_VERSION = 1


class ParamSet:
    """Ordered map ``name -> Tensor`` with an optimizer group tag per entry.

    Every parameter has ``requires_grad=True``. The group decides the
    learning-rate scale applied by the optimizer.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value: np.ndarray, group: str) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def group(self, name: str) -> str:
        return self._groups[name]

    def names(self, group: str | None = None) -> list[str]:
        return [n for n in self._params if group is None or self._groups[n] == group]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet(dtype)
        for name, t in self._params.items():
            out.add(name, t.data, self._groups[name])
        return out

    def copy(self) -> "ParamSet":
        return self.astype(self.dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            arr = state[name]
            if arr.shape != t.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(self.dtype)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def save_checkpoint(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    """Write ``entries`` as SEDC: magic, u32 version, u32 count, then per entry
    u16 name length, UTF-8 name, u8 rank, u32 extents, f32 LE values."""
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(entries))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a SEDC checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
