"""Binary containers for feature maps, mask sets, projection bases, and
query embeddings.

All containers are little-endian with a 4-byte ASCII magic followed by
u32 dimension fields and float32 payloads:

* ``TGRF`` — H, W, C, then H*W*C float32 row-major (feature map or any
  float plane: rendered features, gradients, score maps).
* ``TGRM`` — H, W, K, then K bitmaps, each bit-packed row-major into
  ceil(H*W/8) bytes (big-endian bit order within each byte).
* ``TGRP`` — dim, k, then mean (dim), components (k*dim row-major),
  variances (k), all float32.
* ``TGRQ`` — dim, vector (dim float32), then a UTF-8 label to EOF.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ParseError

MAGIC_FEATURE = b"TGRF"
MAGIC_MASKS = b"TGRM"
MAGIC_PCA = b"TGRP"
MAGIC_QUERY = b"TGRQ"


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ParseError(f"truncated container: expected {n} bytes for {what}")
    return data


def _expect_magic(fh, magic: bytes) -> None:
    got = fh.read(4)
    if got != magic:
        raise ParseError(
            f"bad magic {got!r}, expected {magic.decode()} container")


def write_feature_map(path, data: np.ndarray) -> None:
    """Write an (H, W, C) float array as a TGRF container."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ParseError(f"feature map must be HxWxC, got shape {data.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC_FEATURE)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(arr.tobytes())


def read_feature_map(path) -> np.ndarray:
    """Read a TGRF container into an (H, W, C) float32 array."""
    with open(path, "rb") as fh:
        _expect_magic(fh, MAGIC_FEATURE)
        h, w, c = struct.unpack("<III", _read_exact(fh, 12, "TGRF header"))
        raw = _read_exact(fh, 4 * h * w * c, "TGRF payload")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, c).copy()


def write_masks(path, masks) -> None:
    """Write a list of (H, W) boolean masks as a TGRM container.

    K may be zero; all masks must share one shape.
    """
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if masks:
        h, w = masks[0].shape
        for m in masks:
            if m.shape != (h, w):
                raise ParseError("all masks in a set must share one shape")
    else:
        h = w = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC_MASKS)
        fh.write(struct.pack("<III", h, w, len(masks)))
        for m in masks:
            fh.write(np.packbits(m.reshape(-1)).tobytes())


def read_masks(path) -> list[np.ndarray]:
    """Read a TGRM container into a list of (H, W) boolean masks."""
    with open(path, "rb") as fh:
        _expect_magic(fh, MAGIC_MASKS)
        h, w, k = struct.unpack("<III", _read_exact(fh, 12, "TGRM header"))
        n_bytes = (h * w + 7) // 8
        masks = []
        for _ in range(k):
            raw = _read_exact(fh, n_bytes, "TGRM bitmap")
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: h * w]
            masks.append(bits.astype(bool).reshape(h, w))
    return masks


def write_pca_basis(path, mean: np.ndarray, components: np.ndarray,
                    variances: np.ndarray) -> None:
    """Write a TGRP projection basis (mean, k x dim components, variances)."""
    mean = np.ascontiguousarray(mean, dtype=np.float32).reshape(-1)
    components = np.ascontiguousarray(components, dtype=np.float32)
    variances = np.ascontiguousarray(variances, dtype=np.float32).reshape(-1)
    k, dim = components.shape
    if mean.size != dim or variances.size != k:
        raise ParseError("PCA basis fields have inconsistent sizes")
    with open(path, "wb") as fh:
        fh.write(MAGIC_PCA)
        fh.write(struct.pack("<II", dim, k))
        fh.write(mean.tobytes())
        fh.write(components.tobytes())
        fh.write(variances.tobytes())


def read_pca_basis(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a TGRP container; returns (mean, components, variances)."""
    with open(path, "rb") as fh:
        _expect_magic(fh, MAGIC_PCA)
        dim, k = struct.unpack("<II", _read_exact(fh, 8, "TGRP header"))
        mean = np.frombuffer(_read_exact(fh, 4 * dim, "TGRP mean"), "<f4").copy()
        comps = np.frombuffer(
            _read_exact(fh, 4 * k * dim, "TGRP components"), "<f4"
        ).reshape(k, dim).copy()
        var = np.frombuffer(_read_exact(fh, 4 * k, "TGRP variances"), "<f4").copy()
    return mean, comps, var


def write_query(path, vector: np.ndarray, label: str) -> None:
    """Write a TGRQ query embedding with its UTF-8 label."""
    vec = np.ascontiguousarray(vector, dtype=np.float32).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(MAGIC_QUERY)
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())
        fh.write(label.encode("utf-8"))


def read_query(path) -> tuple[np.ndarray, str]:
    """Read a TGRQ container; returns (vector, label)."""
    with open(path, "rb") as fh:
        _expect_magic(fh, MAGIC_QUERY)
        (dim,) = struct.unpack("<I", _read_exact(fh, 4, "TGRQ header"))
        vec = np.frombuffer(_read_exact(fh, 4 * dim, "TGRQ vector"), "<f4").copy()
        label = fh.read().decode("utf-8")
    return vec, label
