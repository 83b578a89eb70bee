"""Tile-based forward splatting of color, language features, alpha, and
expected depth.

Per pixel, every selected channel is the transmittance-weighted sum over
depth-sorted Gaussians:

    out = sum_i payload_i * alpha_i * prod_{j<i} (1 - alpha_j)

with alpha_i = opacity_i * exp(-0.5 * d^T cov2d^{-1} d).  Feature channels
ride in the same pass as color (one weight computation), so identical
payload columns produce bit-identical output planes.  Accumulation order
is fixed (depth order within a tile, row-major tile order), so rendering
is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .projection import (DEFAULT_NEAR, ProjectedGaussians, max_eigenvalue_2x2,
                         project)
from .scene import Camera, GaussianScene

TILE_SIZE = 16
ALPHA_MAX = 0.999          # keeps transmittance nonzero so gradients survive
# Compositing stops once transmittance drops below this.  The truncation
# error is bounded by STOP_TRANSMITTANCE * max|payload|, which must stay
# below the 1e-5 oracle-equivalence budget.
STOP_TRANSMITTANCE = 1e-6
# Tile binning radius in sigmas.  exp(-0.5 * 7^2) ~ 2e-11, so omitting a
# Gaussian beyond this radius is invisible at the oracle tolerance.
TILE_BIN_SIGMAS = 7.0

COLOR = "color"
FEATURE = "feature"
_KNOWN_CHANNELS = (COLOR, FEATURE)


@dataclass
class RenderOutput:
    """Rendered planes.  ``color``/``feature`` are None unless selected;
    ``alpha`` (accumulated opacity) and ``depth`` (transmittance-weighted
    camera depth) are always produced."""

    color: np.ndarray | None
    feature: np.ndarray | None
    alpha: np.ndarray
    depth: np.ndarray


def normalize_channels(channels) -> tuple[str, ...]:
    chans = tuple(channels)
    for c in chans:
        if c not in _KNOWN_CHANNELS:
            raise ValidationError(f"unknown channel {c!r}")
    if len(set(chans)) != len(chans):
        raise ValidationError("duplicate channel selection")
    # canonical order: color block first, then features
    return tuple(c for c in _KNOWN_CHANNELS if c in chans)


def build_payload(scene: GaussianScene, channels) -> np.ndarray:
    """(N, C) per-Gaussian payload for the selected channels, in canonical
    column order (color columns, then feature columns)."""
    chans = normalize_channels(channels)
    blocks = []
    if COLOR in chans:
        blocks.append(scene.colors.astype(np.float64))
    if FEATURE in chans:
        blocks.append(scene.lang.astype(np.float64))
    if not blocks:
        return np.zeros((scene.count, 0), dtype=np.float64)
    return np.concatenate(blocks, axis=1)


def split_blend(blend: np.ndarray, channels) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Split an (H, W, C) blended block back into color / feature planes."""
    chans = normalize_channels(channels)
    color = feature = None
    offset = 0
    if COLOR in chans:
        color = blend[:, :, offset:offset + 3]
        offset += 3
    if FEATURE in chans:
        feature = blend[:, :, offset:]
    return color, feature


def pixel_centers(x0: int, x1: int, y0: int, y1: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened sample coordinates for the pixel block [y0:y1, x0:x1]."""
    xs = np.arange(x0, x1, dtype=np.float64) + 0.5
    ys = np.arange(y0, y1, dtype=np.float64) + 0.5
    px, py = np.meshgrid(xs, ys)
    return px.reshape(-1), py.reshape(-1)


def inverse_cov2d(cov2d: np.ndarray) -> np.ndarray:
    """Closed-form inverse of symmetric positive-definite 2x2 matrices."""
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = c / det
    inv[:, 0, 1] = -b / det
    inv[:, 1, 0] = -b / det
    inv[:, 1, 1] = a / det
    return inv


def gaussian_alphas(px: np.ndarray, py: np.ndarray, means2d: np.ndarray,
                    inv_cov: np.ndarray, opacities: np.ndarray) -> np.ndarray:
    """(P, G) clamped alpha values for P pixels against G Gaussians."""
    dx = px[:, None] - means2d[None, :, 0]
    dy = py[:, None] - means2d[None, :, 1]
    q = (inv_cov[None, :, 0, 0] * dx * dx
         + 2.0 * inv_cov[None, :, 0, 1] * dx * dy
         + inv_cov[None, :, 1, 1] * dy * dy)
    return np.minimum(opacities[None, :] * np.exp(-0.5 * q), ALPHA_MAX)


def blending_weights(alphas: np.ndarray, stop_transmittance: float
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Transmittance and per-Gaussian blend weights from (P, G) alphas.

    Compositing is cut off once transmittance falls below the stop
    threshold; transmittance is non-increasing along the depth axis, so
    zeroing the tail weights reproduces sequential early termination.
    """
    trans = np.cumprod(1.0 - alphas, axis=1)
    trans = np.concatenate(
        [np.ones((alphas.shape[0], 1)), trans[:, :-1]], axis=1)
    weights = alphas * trans * (trans >= stop_transmittance)
    return trans, weights


def _tile_gaussians(proj: ProjectedGaussians, x0, x1, y0, y1,
                    radius: np.ndarray) -> np.ndarray:
    u = proj.means2d[:, 0]
    v = proj.means2d[:, 1]
    hit = ((u + radius >= x0) & (u - radius <= x1)
           & (v + radius >= y0) & (v - radius <= y1))
    return np.flatnonzero(hit)


def render(scene: GaussianScene, camera: Camera, channels=(COLOR,), *,
           near: float = DEFAULT_NEAR,
           stop_transmittance: float = STOP_TRANSMITTANCE) -> RenderOutput:
    """Render the selected channels plus alpha and expected depth."""
    chans = normalize_channels(channels)
    h, w = camera.height, camera.width
    proj = project(scene, camera, near=near)
    payload_all = build_payload(scene, chans)
    n_channels = payload_all.shape[1]
    blend = np.zeros((h, w, n_channels), dtype=np.float64)
    alpha_plane = np.zeros((h, w), dtype=np.float64)
    depth_plane = np.zeros((h, w), dtype=np.float64)

    if len(proj):
        payload = payload_all[proj.indices]
        inv_cov = inverse_cov2d(proj.cov2d)
        radius = TILE_BIN_SIGMAS * np.sqrt(max_eigenvalue_2x2(proj.cov2d))
        for y0 in range(0, h, TILE_SIZE):
            y1 = min(y0 + TILE_SIZE, h)
            for x0 in range(0, w, TILE_SIZE):
                x1 = min(x0 + TILE_SIZE, w)
                sel = _tile_gaussians(proj, x0, x1, y0, y1, radius)
                if len(sel) == 0:
                    continue
                px, py = pixel_centers(x0, x1, y0, y1)
                alphas = gaussian_alphas(
                    px, py, proj.means2d[sel], inv_cov[sel],
                    proj.opacities[sel])
                _, weights = blending_weights(alphas, stop_transmittance)
                # broadcast-sum over the Gaussian axis: fixed pairwise
                # order, identical for every channel
                tile = (weights[:, :, None] * payload[None, sel, :]).sum(axis=1)
                blend[y0:y1, x0:x1, :] = tile.reshape(y1 - y0, x1 - x0, -1)
                alpha_plane[y0:y1, x0:x1] = weights.sum(axis=1).reshape(
                    y1 - y0, x1 - x0)
                depth_plane[y0:y1, x0:x1] = (
                    weights * proj.depths[None, sel]).sum(axis=1).reshape(
                        y1 - y0, x1 - x0)

    color, feature = split_blend(blend, chans)
    return RenderOutput(color=color, feature=feature,
                        alpha=alpha_plane, depth=depth_plane)
