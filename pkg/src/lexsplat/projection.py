"""Projection of 3D Gaussians to screen space.

Math conventions:

* camera frame: x right, y up, view direction -z; depth d = -z_cam
* pixel coords: u = cx + fx*x/d, v = cy - fy*y/d (v grows downward)
* pixel (row, col) samples the point (col + 0.5, row + 0.5)
* 2D covariance: J @ Sigma_cam @ J.T plus an anti-aliasing floor of
  COV2D_FLOOR on the diagonal, which keeps it positive definite
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Camera, GaussianScene

COV2D_FLOOR = 0.3      # px^2 added to the cov2d diagonal
DEFAULT_NEAR = 0.01    # world units
CULL_SIGMAS = 3.0      # frustum-cull margin in projected sigmas


def quat_to_rotmat(quats: np.ndarray) -> np.ndarray:
    """(N, 4) quaternions (w, x, y, z), assumed unit norm -> (N, 3, 3)."""
    q = np.asarray(quats, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def world_covariances(scene: GaussianScene) -> np.ndarray:
    """(N, 3, 3) world covariances R diag(exp(s))^2 R^T."""
    q = scene.rotations.astype(np.float64)
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    R = quat_to_rotmat(q / norms)
    s = np.exp(scene.scales.astype(np.float64))
    M = R * s[:, None, :]
    return M @ np.swapaxes(M, 1, 2)


@dataclass
class ProjectedGaussians:
    """Depth-sorted screen-space Gaussians (struct of arrays).

    ``indices`` maps each row back to its Gaussian in the source scene;
    rows are sorted by ascending depth with the original index breaking
    ties.
    """

    indices: np.ndarray    # (M,) int64
    means2d: np.ndarray    # (M, 2) pixels
    cov2d: np.ndarray      # (M, 2, 2) px^2, after the anti-aliasing floor
    depths: np.ndarray     # (M,) camera depth (-z_cam)
    opacities: np.ndarray  # (M,) sigmoid of the opacity logits

    def __len__(self) -> int:
        return len(self.indices)


def max_eigenvalue_2x2(cov: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of symmetric 2x2 matrices, batched."""
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    return mid + disc


def project(scene: GaussianScene, camera: Camera, *,
            near: float = DEFAULT_NEAR) -> ProjectedGaussians:
    """Project every Gaussian, culling those behind the near plane or whose
    3-sigma screen footprint misses the image entirely."""
    n = scene.count
    if n == 0:
        return ProjectedGaussians(
            np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros((0, 2, 2)),
            np.zeros(0), np.zeros(0))

    x_cam = camera.to_camera(scene.positions.astype(np.float64))
    depth = -x_cam[:, 2]
    front = depth > near

    idx = np.flatnonzero(front)
    x_cam = x_cam[idx]
    depth = depth[idx]
    u = camera.cx + camera.fx * x_cam[:, 0] / depth
    v = camera.cy - camera.fy * x_cam[:, 1] / depth
    means2d = np.stack([u, v], axis=1)

    cov_w = world_covariances(scene)[idx]
    cov_cam = camera.rotation @ cov_w @ camera.rotation.T

    J = projection_jacobians(x_cam, depth, camera)
    cov2d = J @ cov_cam @ np.swapaxes(J, 1, 2)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    radius = CULL_SIGMAS * np.sqrt(max_eigenvalue_2x2(cov2d))
    on_screen = ((u + radius > 0.0) & (u - radius < camera.width)
                 & (v + radius > 0.0) & (v - radius < camera.height))

    keep = np.flatnonzero(on_screen)
    idx = idx[keep]
    order = np.argsort(depth[keep], kind="stable")
    keep = keep[order]

    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits.astype(np.float64)))
    return ProjectedGaussians(
        indices=idx[order].astype(np.int64),
        means2d=means2d[keep],
        cov2d=cov2d[keep],
        depths=depth[keep],
        opacities=opac[idx[order]],
    )


def projection_jacobians(x_cam: np.ndarray, depth: np.ndarray,
                         camera: Camera) -> np.ndarray:
    """(M, 2, 3) Jacobians of (u, v) w.r.t. camera-frame coordinates."""
    m = len(depth)
    J = np.zeros((m, 2, 3), dtype=np.float64)
    d2 = depth * depth
    J[:, 0, 0] = camera.fx / depth
    J[:, 0, 2] = camera.fx * x_cam[:, 0] / d2
    J[:, 1, 1] = -camera.fy / depth
    J[:, 1, 2] = -camera.fy * x_cam[:, 1] / d2
    return J
