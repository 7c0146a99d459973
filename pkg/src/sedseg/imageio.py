"""Binary PPM/PGM images and SEDL label maps."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .losses import IGNORE_INDEX

LABEL_MAGIC = b"SEDL"
PGM_IGNORE = 255


def _read_netpbm(raw: bytes, magic: bytes) -> tuple[np.ndarray, int, int, int]:
    if raw[:2] != magic:
        raise ValueError(f"expected {magic.decode()} header, found {raw[:2]!r}")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while raw[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ValueError("malformed netpbm header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    return np.frombuffer(raw, dtype=np.uint8, offset=pos), width, height, maxval


def read_ppm(path: str | Path) -> np.ndarray:
    data, w, h, _ = _read_netpbm(Path(path).read_bytes(), b"P6")
    if data.size != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} raster bytes, found {data.size}")
    return data.reshape(h, w, 3).copy()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"PPM needs uint8 [H, W, 3], got {image.dtype} {image.shape}")
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data, w, h, _ = _read_netpbm(Path(path).read_bytes(), b"P5")
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} raster bytes, found {data.size}")
    return data.reshape(h, w).copy()


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"PGM needs uint8 [H, W], got {image.dtype} {image.shape}")
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes())


def write_sedl(path: str | Path, label: np.ndarray) -> None:
    label = np.asarray(label, dtype=np.uint16)
    h, w = label.shape
    Path(path).write_bytes(LABEL_MAGIC + struct.pack("<II", h, w) + label.astype("<u2").tobytes())


def read_sedl(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != LABEL_MAGIC:
        raise ValueError(f"{path}: not a SEDL label map")
    h, w = struct.unpack_from("<II", raw, 4)
    if len(raw) != 12 + 2 * h * w:
        raise ValueError(f"{path}: expected {12 + 2 * h * w} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<u2", offset=12).reshape(h, w).astype(np.uint16)


def label_suffix(num_classes: int) -> str:
    return ".pgm" if num_classes <= PGM_IGNORE else ".sedl"


def write_label(path: str | Path, label: np.ndarray, num_classes: int) -> Path:
    """PGM when categories fit in a byte (ignore -> 255), SEDL otherwise.

    The suffix of ``path`` is replaced to match the chosen format.
    """
    path = Path(path).with_suffix(label_suffix(num_classes))
    label = np.asarray(label)
    if num_classes <= PGM_IGNORE:
        out = np.where(label == IGNORE_INDEX, PGM_IGNORE, label).astype(np.uint8)
        write_pgm(path, out)
    else:
        write_sedl(path, label)
    return path


def read_label(path: str | Path) -> np.ndarray:
    """Label map as uint16 with the 65535 ignore sentinel."""
    path = Path(path)
    head = path.read_bytes()[:4]
    if head == LABEL_MAGIC:
        return read_sedl(path)
    lab = read_pgm(path).astype(np.uint16)
    lab[lab == PGM_IGNORE] = IGNORE_INDEX
    return lab
