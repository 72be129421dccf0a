"""File formats: label fields, grayscale images, manifests."""

from __future__ import annotations

import json
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

FIELD_MAGIC = b"PTTS"


def write_field_csv(path, field) -> None:
    """Rows of 1-based integer labels."""
    z = np.asarray(field)
    np.savetxt(path, z + 1, fmt="%d", delimiter=",")


def read_field_csv(path) -> np.ndarray:
    z = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    if z.min() < 1:
        raise ValueError(f"{path}: labels must be 1-based")
    return z - 1


def write_field_binary(path, field, q: int) -> None:
    """Header ``PTTS`` + little-endian uint32 rows, cols, q; one byte per site (1-based)."""
    z = np.asarray(field)
    if q > 255:
        raise ValueError("binary field format holds at most 255 states")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<III", z.shape[0], z.shape[1], q))
        fh.write((z + 1).astype(np.uint8).tobytes())


def read_field_binary(path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a binary field file")
    rows, cols, q = struct.unpack("<III", data[4:16])
    z = np.frombuffer(data[16:], dtype=np.uint8)
    if z.size != rows * cols:
        raise ValueError(f"{path}: payload size {z.size} != {rows}x{cols}")
    return z.reshape(rows, cols).astype(np.int64) - 1, q


def read_field(path) -> tuple[np.ndarray, int | None]:
    """Load a field by extension; returns (0-based states, q if stored)."""
    path = Path(path)
    if path.suffix in (".bin", ".pfd"):
        return read_field_binary(path)
    return read_field_csv(path), None


def write_field(path, field, q: int) -> None:
    path = Path(path)
    if path.suffix in (".bin", ".pfd"):
        write_field_binary(path, field, q)
    else:
        write_field_csv(path, field)


def read_pgm(path) -> np.ndarray:
    """Read an 8- or 16-bit binary PGM (P5) as a float array of raw intensities."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return img.reshape(height, width).astype(float)


def write_pgm(path, image, maxval: int = 255) -> None:
    img = np.clip(np.rint(np.asarray(image, dtype=float)), 0, maxval).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        fh.write(img.tobytes())


def normalize_intensities(img) -> np.ndarray:
    """Affinely map intensities onto [0, 1]."""
    img = np.asarray(img, dtype=float)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.full_like(img, 0.5)
    return (img - lo) / (hi - lo)


def read_image(path, normalize: bool = True) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img = read_pgm(path)
    else:
        img = np.loadtxt(path, delimiter=",", ndmin=2)
    return normalize_intensities(img) if normalize else img


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_manifest(path, command: str, config: dict, seeds: dict, artifacts: dict, started: float) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "wall_time_s": round(time.time() - started, 3),
        "version": __version__,
        "python": sys.version.split()[0],
        "argv": sys.argv,
    }
    dump_json(manifest, path)
    return manifest
