"""Brute-force reference renderer.

Ground truth for the tiled rasterizer: per-pixel evaluation of every
projected Gaussian (no tiles, no early termination), with the blend
accumulated in extended precision.  Intentionally written as a separate
straight-line evaluation of the blending recurrence so the two paths
share only the projection step.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .projection import DEFAULT_NEAR, project
from .rasterizer import (ALPHA_MAX, RenderOutput, build_payload,
                         normalize_channels, split_blend)
from .scene import Camera, GaussianScene

MAX_ORACLE_GAUSSIANS = 10_000
_PIXEL_CHUNK = 256


def render_reference(scene: GaussianScene, camera: Camera,
                     channels=("color",), *,
                     near: float = DEFAULT_NEAR) -> RenderOutput:
    """Reference render of the selected channels plus alpha and depth."""
    if scene.count > MAX_ORACLE_GAUSSIANS:
        raise ValidationError(
            f"reference renderer capped at {MAX_ORACLE_GAUSSIANS} Gaussians, "
            f"got {scene.count}")
    chans = normalize_channels(channels)
    h, w = camera.height, camera.width
    proj = project(scene, camera, near=near)
    payload = build_payload(scene, chans)[proj.indices].astype(np.longdouble)
    n_channels = payload.shape[1]

    blend = np.zeros((h * w, n_channels), dtype=np.longdouble)
    alpha_plane = np.zeros(h * w, dtype=np.longdouble)
    depth_plane = np.zeros(h * w, dtype=np.longdouble)

    if len(proj):
        # covariance inverse via explicit 2x2 adjugate
        a = proj.cov2d[:, 0, 0]
        b = proj.cov2d[:, 0, 1]
        c = proj.cov2d[:, 1, 1]
        det = a * c - b * b
        ia, ib, ic = c / det, -b / det, a / det

        cols = (np.arange(h * w) % w) + 0.5
        rows = (np.arange(h * w) // w) + 0.5
        depths = proj.depths.astype(np.longdouble)

        for start in range(0, h * w, _PIXEL_CHUNK):
            end = min(start + _PIXEL_CHUNK, h * w)
            dx = cols[start:end, None] - proj.means2d[None, :, 0]
            dy = rows[start:end, None] - proj.means2d[None, :, 1]
            mahal = ia[None, :] * dx * dx + 2 * ib[None, :] * dx * dy \
                + ic[None, :] * dy * dy
            alpha = np.minimum(
                proj.opacities[None, :] * np.exp(-0.5 * mahal), ALPHA_MAX
            ).astype(np.longdouble)
            # blending recurrence, evaluated in full for every Gaussian
            keep = np.cumprod(1.0 - alpha, axis=1)
            trans = np.ones_like(alpha)
            trans[:, 1:] = keep[:, :-1]
            weight = alpha * trans
            blend[start:end] = (weight[:, :, None] * payload[None, :, :]).sum(axis=1)
            alpha_plane[start:end] = weight.sum(axis=1)
            depth_plane[start:end] = (weight * depths[None, :]).sum(axis=1)

    blend64 = blend.astype(np.float64).reshape(h, w, n_channels)
    color, feature = split_blend(blend64, chans)
    return RenderOutput(
        color=color, feature=feature,
        alpha=alpha_plane.astype(np.float64).reshape(h, w),
        depth=depth_plane.astype(np.float64).reshape(h, w))
