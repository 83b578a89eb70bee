"""Writers (and the one reader we need) for the splat-engine binary
containers.

Implemented against the published format contract, not against the
engine's code: little-endian, 4-byte magic, u32 dimensions, float32
payloads.  TGRF carries H*W*C row-major floats; TGRM carries K bitmaps
bit-packed row-major; TGRQ carries a float vector plus a UTF-8 label;
TGRP (read-only here) carries a PCA mean, k x dim components, and
variances.
"""

from __future__ import annotations

import struct

import numpy as np


class ContainerError(ValueError):
    pass


def write_feature_map(path, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ContainerError(f"feature map must be HxWxC, got {data.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"TGRF")
        fh.write(struct.pack("<III", h, w, c))
        fh.write(arr.tobytes())


def write_masks(path, masks) -> None:
    masks = [np.asarray(m, dtype=bool) for m in masks]
    h, w = masks[0].shape if masks else (0, 0)
    for m in masks:
        if m.shape != (h, w):
            raise ContainerError("masks must share one shape")
    with open(path, "wb") as fh:
        fh.write(b"TGRM")
        fh.write(struct.pack("<III", h, w, len(masks)))
        for m in masks:
            fh.write(np.packbits(m.reshape(-1)).tobytes())


def write_query(path, vector: np.ndarray, label: str) -> None:
    vec = np.ascontiguousarray(vector, dtype=np.float32).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(b"TGRQ")
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())
        fh.write(label.encode("utf-8"))


def read_pca_basis(path):
    """Returns (mean, components, variances) from a TGRP file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"TGRP":
            raise ContainerError(f"bad TGRP magic {magic!r}")
        dim, k = struct.unpack("<II", fh.read(8))
        mean = np.frombuffer(fh.read(4 * dim), "<f4").astype(np.float64)
        comps = np.frombuffer(fh.read(4 * k * dim), "<f4").astype(
            np.float64).reshape(k, dim)
        variances = np.frombuffer(fh.read(4 * k), "<f4").astype(np.float64)
    if mean.size != dim or comps.size != k * dim or variances.size != k:
        raise ContainerError("truncated TGRP file")
    return mean, comps, variances
