"""Analytic gradients of the tiled renderer.

Recomputes the forward blending per tile, then backpropagates through
the weight recurrence, the screen-space Gaussian evaluation, the
projection, and the covariance factorization down to every scene
parameter.  Per-Gaussian statistics are accumulated tile by tile in
row-major order, so the reduction order (and therefore the result bits)
is independent of how work is grouped.

Gradient caveats (all measure-zero, mirrored from the forward pass):
alpha clamping at ALPHA_MAX and the early-termination cutoff contribute
zero subgradient where they are active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .projection import (DEFAULT_NEAR, max_eigenvalue_2x2, project,
                         projection_jacobians, quat_to_rotmat)
from .rasterizer import (ALPHA_MAX, STOP_TRANSMITTANCE, TILE_BIN_SIGMAS,
                         TILE_SIZE, blending_weights, build_payload,
                         inverse_cov2d, normalize_channels, pixel_centers,
                         _tile_gaussians)
from .scene import Camera, GaussianScene, LANG_DIM


@dataclass
class OutputGradients:
    """Upstream per-pixel gradients, one plane per RenderOutput field.
    Planes may be None when no gradient flows through that output."""

    color: np.ndarray | None = None
    feature: np.ndarray | None = None
    alpha: np.ndarray | None = None
    depth: np.ndarray | None = None


@dataclass
class SceneGradients:
    """Gradients w.r.t. every per-Gaussian parameter array."""

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacity_logits: np.ndarray
    lang: np.ndarray

    @staticmethod
    def zeros(n: int) -> "SceneGradients":
        return SceneGradients(
            positions=np.zeros((n, 3)), scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)), colors=np.zeros((n, 3)),
            opacity_logits=np.zeros(n), lang=np.zeros((n, LANG_DIM)))


def _check_plane(name, plane, shape):
    if plane is None:
        return None
    plane = np.asarray(plane, dtype=np.float64)
    if plane.shape != shape:
        raise ValidationError(
            f"upstream {name} gradient has shape {plane.shape}, "
            f"expected {shape}")
    return plane


def render_backward(scene: GaussianScene, camera: Camera, channels,
                    upstream: OutputGradients, *,
                    near: float = DEFAULT_NEAR,
                    stop_transmittance: float = STOP_TRANSMITTANCE
                    ) -> SceneGradients:
    """Backpropagate per-pixel output gradients to scene parameters.

    ``channels`` must match the forward render: an upstream color or
    feature plane is only accepted when that channel was rendered.
    Culled Gaussians receive zero gradient.
    """
    chans = normalize_channels(channels)
    h, w = camera.height, camera.width
    u_color = _check_plane("color", upstream.color, (h, w, 3))
    u_feature = _check_plane("feature", upstream.feature, (h, w, LANG_DIM))
    u_alpha = _check_plane("alpha", upstream.alpha, (h, w))
    u_depth = _check_plane("depth", upstream.depth, (h, w))
    if u_color is not None and "color" not in chans:
        raise ValidationError("color gradient supplied but channel not rendered")
    if u_feature is not None and "feature" not in chans:
        raise ValidationError("feature gradient supplied but channel not rendered")

    grads = SceneGradients.zeros(scene.count)
    proj = project(scene, camera, near=near)
    m = len(proj)
    if m == 0:
        return grads

    payload = build_payload(scene, chans)[proj.indices]
    colors = scene.colors.astype(np.float64)[proj.indices]
    lang = scene.lang.astype(np.float64)[proj.indices]
    inv_cov = inverse_cov2d(proj.cov2d)
    radius = TILE_BIN_SIGMAS * np.sqrt(max_eigenvalue_2x2(proj.cov2d))

    # per-projected-Gaussian accumulators (depth order)
    d_mean_m1 = np.zeros((m, 2))        # sum_px dq * delta
    d_cov_m2 = np.zeros((m, 3))         # sum_px dq * (dxdx, dxdy, dydy)
    d_opac = np.zeros(m)
    d_color = np.zeros((m, 3))
    d_lang = np.zeros((m, LANG_DIM))
    d_depth_payload = np.zeros(m)

    for y0 in range(0, h, TILE_SIZE):
        y1 = min(y0 + TILE_SIZE, h)
        for x0 in range(0, w, TILE_SIZE):
            x1 = min(x0 + TILE_SIZE, w)
            sel = _tile_gaussians(proj, x0, x1, y0, y1, radius)
            if len(sel) == 0:
                continue
            px, py = pixel_centers(x0, x1, y0, y1)
            dx = px[:, None] - proj.means2d[None, sel, 0]
            dy = py[:, None] - proj.means2d[None, sel, 1]
            mahal = (inv_cov[None, sel, 0, 0] * dx * dx
                     + 2.0 * inv_cov[None, sel, 0, 1] * dx * dy
                     + inv_cov[None, sel, 1, 1] * dy * dy)
            g_val = np.exp(-0.5 * mahal)
            unclamped = proj.opacities[None, sel] * g_val
            alphas = np.minimum(unclamped, ALPHA_MAX)
            trans, weights = blending_weights(alphas, stop_transmittance)
            live = trans >= stop_transmittance

            # payload-side pixel dot product b = dL/dw per (pixel, gaussian)
            b = np.zeros_like(weights)
            if u_color is not None:
                uc = u_color[y0:y1, x0:x1].reshape(-1, 3)
                b += uc @ colors[sel].T
                d_color[sel] += weights.T @ uc
            if u_feature is not None:
                uf = u_feature[y0:y1, x0:x1].reshape(-1, LANG_DIM)
                b += uf @ lang[sel].T
                d_lang[sel] += weights.T @ uf
            if u_alpha is not None:
                b += u_alpha[y0:y1, x0:x1].reshape(-1, 1)
            if u_depth is not None:
                ud = u_depth[y0:y1, x0:x1].reshape(-1, 1)
                b += ud * proj.depths[None, sel]
                d_depth_payload[sel] += (weights * ud).sum(axis=0)

            # d(out)/d(alpha_i) = T_i b_i - sum_{k>i} w_k b_k / (1 - alpha_i)
            wb = weights * b
            suffix = np.cumsum(wb[:, ::-1], axis=1)[:, ::-1] - wb
            d_alpha = live * (trans * b - suffix / (1.0 - alphas))
            d_og = d_alpha * (unclamped < ALPHA_MAX)

            d_opac[sel] += (g_val * d_og).sum(axis=0)
            dq = -0.5 * unclamped * d_og

            d_mean_m1[sel, 0] += (dq * dx).sum(axis=0)
            d_mean_m1[sel, 1] += (dq * dy).sum(axis=0)
            d_cov_m2[sel, 0] += (dq * dx * dx).sum(axis=0)
            d_cov_m2[sel, 1] += (dq * dx * dy).sum(axis=0)
            d_cov_m2[sel, 2] += (dq * dy * dy).sum(axis=0)

    _chain_to_parameters(
        scene, camera, proj, inv_cov, grads,
        d_mean_m1, d_cov_m2, d_opac, d_color, d_lang, d_depth_payload)
    return grads


def _rotation_derivatives(qn: np.ndarray) -> np.ndarray:
    """(M, 4, 3, 3) derivative of the rotation matrix w.r.t. each component
    of the (already normalized) quaternion."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    zero = np.zeros_like(w)
    dRw = np.stack([zero, -2 * z, 2 * y,
                    2 * z, zero, -2 * x,
                    -2 * y, 2 * x, zero], axis=1).reshape(-1, 3, 3)
    dRx = np.stack([zero, 2 * y, 2 * z,
                    2 * y, -4 * x, -2 * w,
                    2 * z, 2 * w, -4 * x], axis=1).reshape(-1, 3, 3)
    dRy = np.stack([-4 * y, 2 * x, 2 * w,
                    2 * x, zero, 2 * z,
                    -2 * w, 2 * z, -4 * y], axis=1).reshape(-1, 3, 3)
    dRz = np.stack([-4 * z, -2 * w, 2 * x,
                    2 * w, -4 * z, 2 * y,
                    2 * x, 2 * y, zero], axis=1).reshape(-1, 3, 3)
    return np.stack([dRw, dRx, dRy, dRz], axis=1)


def _chain_to_parameters(scene, camera, proj, inv_cov, grads,
                         d_mean_m1, d_cov_m2, d_opac, d_color, d_lang,
                         d_depth_payload):
    """Chain screen-space gradient moments down to scene parameters."""
    idx = proj.indices
    depth = proj.depths
    x_cam = camera.to_camera(scene.positions.astype(np.float64))[idx]

    # screen-space gradients from the accumulated moments
    d_mean2d = -2.0 * np.einsum("mij,mj->mi", inv_cov, d_mean_m1)
    m2 = np.empty((len(idx), 2, 2))
    m2[:, 0, 0] = d_cov_m2[:, 0]
    m2[:, 0, 1] = d_cov_m2[:, 1]
    m2[:, 1, 0] = d_cov_m2[:, 1]
    m2[:, 1, 1] = d_cov_m2[:, 2]
    d_cov2d = -inv_cov @ m2 @ inv_cov

    # cov2d = J Sigma_cam J^T (the diagonal floor passes gradients through)
    J = projection_jacobians(x_cam, depth, camera)
    cov_w = _world_cov_factors(scene, idx)
    sigma_cam = camera.rotation @ cov_w["sigma_w"] @ camera.rotation.T
    d_sigma_cam = np.swapaxes(J, 1, 2) @ d_cov2d @ J
    dJ = 2.0 * d_cov2d @ J @ sigma_cam

    # position gradient in the camera frame
    fx, fy = camera.fx, camera.fy
    xc, yc = x_cam[:, 0], x_cam[:, 1]
    d2, d3 = depth * depth, depth ** 3
    gx = d_mean2d[:, 0] * fx / depth + dJ[:, 0, 2] * fx / d2
    gy = d_mean2d[:, 1] * (-fy / depth) + dJ[:, 1, 2] * (-fy / d2)
    gz = (d_mean2d[:, 0] * fx * xc / d2
          + d_mean2d[:, 1] * (-fy * yc / d2)
          + dJ[:, 0, 0] * fx / d2
          + dJ[:, 0, 2] * 2.0 * fx * xc / d3
          + dJ[:, 1, 1] * (-fy / d2)
          + dJ[:, 1, 2] * (-2.0 * fy * yc / d3)
          - d_depth_payload)
    d_xcam = np.stack([gx, gy, gz], axis=1)
    grads.positions[idx] = d_xcam @ camera.rotation

    # covariance gradient back to scales and rotations
    d_sigma_w = camera.rotation.T @ d_sigma_cam @ camera.rotation
    dM = 2.0 * d_sigma_w @ cov_w["M"]
    grads.scales[idx] = cov_w["exp_s"] * np.einsum(
        "mak,mak->mk", cov_w["R"], dM)
    dR = dM * cov_w["exp_s"][:, None, :]
    dRq = _rotation_derivatives(cov_w["qn"])
    d_qn = np.einsum("mkab,mab->mk", dRq, dR)
    # backprop through quaternion normalization
    qn, q_norm = cov_w["qn"], cov_w["q_norm"]
    grads.rotations[idx] = (d_qn - qn * (d_qn * qn).sum(axis=1, keepdims=True)) \
        / q_norm[:, None]

    sig = proj.opacities
    grads.opacity_logits[idx] = d_opac * sig * (1.0 - sig)
    grads.colors[idx] = d_color
    grads.lang[idx] = d_lang


def _world_cov_factors(scene: GaussianScene, idx: np.ndarray) -> dict:
    q = scene.rotations.astype(np.float64)[idx]
    q_norm = np.linalg.norm(q, axis=1)
    qn = q / q_norm[:, None]
    R = quat_to_rotmat(qn)
    exp_s = np.exp(scene.scales.astype(np.float64)[idx])
    M = R * exp_s[:, None, :]
    return {"qn": qn, "q_norm": q_norm, "R": R, "exp_s": exp_s,
            "M": M, "sigma_w": M @ np.swapaxes(M, 1, 2)}
