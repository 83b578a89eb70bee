"""Shared scene/camera builders for the test suite."""

import numpy as np
import pytest

from lexsplat.scene import GaussianScene, LANG_DIM, look_at


def random_scene(rng, n, spread=1.0, dtype=np.float32, lang_scale=1.0,
                 opacity_range=(-1.4, 2.2)):
    """Generic random scene inside a +/- spread box."""
    positions = rng.uniform(-spread, spread, (n, 3))
    scales = rng.uniform(np.log(0.05), np.log(0.3), (n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    colors = rng.uniform(0.0, 1.0, (n, 3))
    logits = rng.uniform(*opacity_range, n)
    lang = rng.normal(size=(n, LANG_DIM)) * lang_scale
    return GaussianScene(
        positions.astype(dtype), scales.astype(dtype), quats.astype(dtype),
        colors.astype(dtype), logits.astype(dtype), lang.astype(dtype))


def front_camera(width=32, height=32, fx=30.0, fy=30.0, distance=4.0,
                 camera_id="front"):
    """Camera on the -y axis with a horizontal view axis (along +y)."""
    return look_at([0.0, -distance, 0.3], [0.0, 0.0, 0.3],
                   fx=fx, fy=fy, cx=width / 2, cy=height / 2,
                   width=width, height=height, camera_id=camera_id)


def smooth_scene(rng, n=6, depth_gap=0.3):
    """Scene safe for finite differences: separated depths, moderate
    opacity, footprints well inside the image, no clamping active."""
    positions = np.stack([
        rng.uniform(-0.5, 0.5, n),
        np.sort(rng.uniform(-0.8, 0.8, n)) + np.arange(n) * depth_gap,
        rng.uniform(-0.3, 0.3, n),
    ], axis=1)
    scales = rng.uniform(np.log(0.05), np.log(0.25), (n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    colors = rng.uniform(0.1, 0.9, (n, 3))
    logits = rng.uniform(-1.2, 1.2, n)
    lang = rng.normal(size=(n, LANG_DIM))
    return GaussianScene(positions, scales, quats, colors, logits, lang)


def axis_gaussian_scene(depths, lang_rows=None, logits=None, sigma=0.25):
    """Gaussians on the optical axis of front_camera at the given depths
    (camera sits at y = -4, so depth d puts a point at y = d - 4)."""
    n = len(depths)
    positions = np.zeros((n, 3))
    positions[:, 1] = np.asarray(depths) - 4.0
    positions[:, 2] = 0.3  # stay on the camera axis (camera z = 0.3)
    scales = np.full((n, 3), np.log(sigma))
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    colors = np.full((n, 3), 0.5)
    logits = np.zeros(n) if logits is None else np.asarray(logits, float)
    lang = np.zeros((n, LANG_DIM)) if lang_rows is None \
        else np.asarray(lang_rows, float)
    return GaussianScene(positions, scales, quats, colors, logits, lang)


def two_cluster_scene(rng, per_cluster=50):
    """Two 50-Gaussian clusters with orthogonal unit language embeddings;
    returns (scene, q1, q2)."""
    q1 = np.zeros(LANG_DIM)
    q1[0] = 1.0
    q2 = np.zeros(LANG_DIM)
    q2[1] = 1.0
    n = 2 * per_cluster
    scene = random_scene(rng, n)
    lang = np.zeros((n, LANG_DIM), dtype=np.float32)
    lang[:per_cluster] = q1
    lang[per_cluster:] = q2
    scene.lang = lang
    return scene, q1, q2


def orbit_camera(azimuth_deg, center=(0.0, 0.0, 0.8), radius=5.0, height=2.2,
                 image=48, fx=40.0, camera_id=""):
    az = np.radians(azimuth_deg)
    pos = np.asarray(center, float) + [radius * np.cos(az),
                                       radius * np.sin(az), height]
    return look_at(pos, center, fx=fx, fy=fx, cx=image / 2, cy=image / 2,
                   width=image, height=image, camera_id=camera_id)


def two_object_scene(rng):
    """Editing fixture: object A (embedding e0) and object B (e1) on a
    zero-embedding floor.  Returns (scene, query_a, a_indices)."""
    q_a = np.zeros(LANG_DIM)
    q_a[0] = 1.0
    q_b = np.zeros(LANG_DIM)
    q_b[1] = 1.0

    def cluster(center, color):
        pos = np.asarray(center) + rng.normal(0, 0.12, (10, 3))
        colors = np.clip(color + rng.normal(0, 0.05, (10, 3)), 0.05, 0.95)
        return pos, colors

    pos_a, col_a = cluster([0.0, 0.0, 0.8], [0.2, 0.3, 0.7])
    pos_b, col_b = cluster([1.6, 0.0, 0.8], [0.3, 0.7, 0.3])
    gx, gy = np.meshgrid(np.linspace(-1.5, 3.0, 6), np.linspace(-1.5, 1.5, 4))
    pos_f = np.stack([gx.ravel(), gy.ravel(), np.full(24, -0.2)], axis=1)
    col_f = np.clip(0.55 + rng.normal(0, 0.03, (24, 3)), 0.05, 0.95)

    positions = np.concatenate([pos_a, pos_b, pos_f])
    n = len(positions)
    scales = np.concatenate([
        np.full((10, 3), np.log(0.16)), np.full((10, 3), np.log(0.16)),
        np.full((24, 3), np.log(0.40))])
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    colors = np.concatenate([col_a, col_b, col_f])
    logits = np.full(n, 2.5)
    lang = np.zeros((n, LANG_DIM))
    lang[:10] = q_a
    lang[10:20] = q_b
    scene = GaussianScene(positions, scales, quats, colors, logits, lang)
    return scene, q_a, np.arange(10)


def arc_dataset_cameras(image=48, fx=40.0):
    """Bounded-arc dataset (five cameras over 120 degrees): view ring
    selection is deterministic for these."""
    return [orbit_camera(a, image=image, fx=fx, camera_id=f"orbit{a}")
            for a in (-60, -30, 0, 30, 60)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
