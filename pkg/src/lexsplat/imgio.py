"""PNG export helpers: previews, colormapped heatmaps."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Clip a float image in [0, 1] to 8-bit."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return (arr * 255.0 + 0.5).astype(np.uint8)


def write_png(path, image: np.ndarray) -> None:
    """Write a float image ((H, W) grayscale or (H, W, 3) RGB) as PNG."""
    arr = to_uint8(image)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def write_heatmap_png(path, scores: np.ndarray) -> None:
    """Render a score map in [-1, 1] through the turbo colormap."""
    import matplotlib
    turbo = matplotlib.colormaps["turbo"]
    normalized = (np.clip(np.asarray(scores, dtype=np.float64), -1.0, 1.0)
                  + 1.0) / 2.0
    rgba = turbo(normalized)
    write_png(path, rgba[:, :, :3])


def write_step_previews(scene, ring, run_dir, step: int) -> None:
    """Save PNG previews of the four current ring views."""
    from .rasterizer import render
    for i, cam in enumerate(ring.cameras):
        out = render(scene, cam, ("color",))
        write_png(os.path.join(run_dir, f"preview_{step:06d}_view{i}.png"),
                  out.color)
