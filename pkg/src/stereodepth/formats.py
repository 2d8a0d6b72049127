"""Image file formats.

PFM (portable float map) carries disparity and confidence maps: grayscale
"Pf" only, rows stored bottom to top, fp32 samples, negative scale means
little-endian. Invalid pixels are NaN and survive round trips bit for bit.

PPM (P6) and PGM (P5) carry 8-bit color images and masks for the synthetic
dataset on disk.
"""

from __future__ import annotations

import numpy as np


def write_pfm(data: np.ndarray, scale: float = -1.0) -> bytes:
    """Encode a [H,W] float map. The sign of scale selects endianness
    (negative = little-endian); its magnitude is carried verbatim."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM maps are 2-D, got shape {arr.shape}")
    if scale == 0.0:
        raise ValueError("PFM scale must be nonzero")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n{scale!r}\n".encode("ascii")
    order = "<f4" if scale < 0 else ">f4"
    return header + np.flipud(arr).astype(order, copy=False).tobytes()


def read_pfm(source) -> tuple[np.ndarray, float]:
    """Decode PFM bytes (or a path) to a [H,W] float32 map plus the stored
    signed scale."""
    if isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    else:
        with open(source, "rb") as f:
            buf = f.read()

    def next_line(pos):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise ValueError("truncated PFM header")
        return buf[pos:end].decode("ascii", errors="replace"), end + 1

    magic, pos = next_line(0)
    if magic == "PF":
        raise ValueError("color PFM unsupported")
    if magic != "Pf":
        raise ValueError(f"not a PFM file: bad magic {magic!r}")
    dims, pos = next_line(pos)
    parts = dims.split()
    if len(parts) != 2:
        raise ValueError(f"malformed PFM dimensions line {dims!r}")
    w, h = int(parts[0]), int(parts[1])
    if w <= 0 or h <= 0:
        raise ValueError(f"invalid PFM dimensions {w}x{h}")
    scale_line, pos = next_line(pos)
    scale = float(scale_line)
    if scale == 0.0:
        raise ValueError("PFM scale must be nonzero")
    order = "<f4" if scale < 0 else ">f4"
    payload = buf[pos:]
    if len(payload) < 4 * w * h:
        raise ValueError(f"truncated PFM payload: {len(payload)} bytes for {w}x{h}")
    arr = np.frombuffer(payload[:4 * w * h], dtype=order).reshape(h, w)
    return np.ascontiguousarray(np.flipud(arr)).astype(np.float32), scale


def write_pfm_file(path, data: np.ndarray, scale: float = -1.0) -> None:
    with open(path, "wb") as f:
        f.write(write_pfm(data, scale))


def write_ppm(image: np.ndarray) -> bytes:
    """Encode a [3,H,W] float image in [0,1] as 8-bit binary PPM."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] image, got {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[1:]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def write_pgm(gray: np.ndarray) -> bytes:
    """Encode a [H,W] uint8 (or boolean) map as binary PGM."""
    arr = np.asarray(gray)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    arr = arr.astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected [H,W] map, got {arr.shape}")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def _read_netpbm(buf: bytes, magic: str, channels: int):
    tokens = []
    pos = len(magic)
    if buf[:pos].decode("ascii", errors="replace") != magic:
        raise ValueError(f"bad magic, expected {magic}")
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":  # comment line
            pos = buf.find(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    n = w * h * channels
    payload = buf[pos:pos + n]
    if len(payload) != n:
        raise ValueError(f"truncated payload: {len(payload)} bytes for {w}x{h}")
    return np.frombuffer(payload, dtype=np.uint8), w, h


def read_ppm(source) -> np.ndarray:
    """Decode binary PPM to a [3,H,W] float32 image in [0,1]."""
    buf = source if isinstance(source, (bytes, bytearray)) else open(source, "rb").read()
    flat, w, h = _read_netpbm(bytes(buf), "P6", 3)
    img = flat.reshape(h, w, 3).transpose(2, 0, 1)
    return np.ascontiguousarray(img).astype(np.float32) / 255.0


def read_pgm(source) -> np.ndarray:
    """Decode binary PGM to a [H,W] uint8 map."""
    buf = source if isinstance(source, (bytes, bytearray)) else open(source, "rb").read()
    flat, w, h = _read_netpbm(bytes(buf), "P5", 1)
    return np.ascontiguousarray(flat.reshape(h, w))
