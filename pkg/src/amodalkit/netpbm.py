"""Binary Netpbm readers and writers: P6 RGB images and 16-bit P5 graymaps."""
from __future__ import annotations

import numpy as np


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6, maxval 255)."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got shape {arr.shape} dtype {arr.dtype}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_pgm16(path, values: np.ndarray) -> None:
    """Write an (H, W) uint16 image as binary PGM (P5, maxval 65535, MSB first)."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise ValueError(f"expected (H, W) uint16 image, got shape {arr.shape} dtype {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(arr.astype(">u2").tobytes())


def _read_tokens(data: bytes, count: int, path) -> tuple[list[bytes], int]:
    """Pull whitespace-separated header tokens, skipping '#' comments."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ValueError(f"truncated netpbm header in {path}")
        c = data[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and data[j : j + 1] not in b" \t\r\n":
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte separates header from payload


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_tokens(data, 4, path)
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: expected P6 magic, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported PPM maxval {maxval}")
    payload = data[offset : offset + w * h * 3]
    if len(payload) != w * h * 3:
        raise ValueError(f"{path}: truncated PPM payload ({len(payload)} of {w * h * 3} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_tokens(data, 4, path)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: expected P5 magic, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 65535:
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    payload = data[offset : offset + w * h * 2]
    if len(payload) != w * h * 2:
        raise ValueError(f"{path}: truncated PGM payload ({len(payload)} of {w * h * 2} bytes)")
    return np.frombuffer(payload, dtype=">u2").reshape(h, w).astype(np.uint16)
