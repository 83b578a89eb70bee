import numpy as np
import pytest

from lexsplat.errors import ParseError, ValidationError
from lexsplat.scene import (Camera, GaussianScene, LANG_DIM, dumps_scene,
                            empty_scene, load_scene, loads_scene, look_at,
                            object_box, save_scene)

from conftest import random_scene


def test_roundtrip_bit_exact(rng, tmp_path):
    scene = random_scene(rng, 100)
    path = tmp_path / "scene.ply"
    save_scene(scene, path)
    back = load_scene(path)
    for name in ("positions", "scales", "rotations", "colors",
                 "opacity_logits", "lang"):
        assert np.array_equal(getattr(scene, name), getattr(back, name)), name


def test_roundtrip_empty_scene(tmp_path):
    path = tmp_path / "empty.ply"
    save_scene(empty_scene(), path)
    back = load_scene(path)
    assert back.count == 0


def test_save_refuses_nan(rng, tmp_path):
    scene = random_scene(rng, 5)
    scene.positions[2, 1] = np.nan
    with pytest.raises(ValidationError, match="Gaussian 2"):
        save_scene(scene, tmp_path / "bad.ply")


def test_two_point_file_with_lang(rng, tmp_path):
    scene = random_scene(rng, 2)
    path = tmp_path / "two.ply"
    save_scene(scene, path)
    back = load_scene(path)
    assert back.count == 2
    assert np.array_equal(back.lang, scene.lang)


def _legacy_ply_bytes(n, rng):
    """Splat file without any f_lang_* attributes."""
    names = (["x", "y", "z"] + [f"f_dc_{i}" for i in range(3)] + ["opacity"]
             + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)])
    rec = np.zeros(n, dtype=[(name, "<f4") for name in names])
    for i in range(3):
        rec[f"f_dc_{i}"] = rng.uniform(0, 1, n)
    rec["rot_0"] = 1.0
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
        + [f"property float {name}" for name in names] + ["end_header", ""])
    return header.encode() + rec.tobytes()


def test_legacy_file_loads_zero_lang(rng):
    scene = loads_scene(_legacy_ply_bytes(2, rng))
    assert scene.count == 2
    assert np.array_equal(scene.lang, np.zeros((2, LANG_DIM), np.float32))


def test_truncated_vertex_data(rng):
    data = dumps_scene(random_scene(rng, 4))
    with pytest.raises(ParseError, match="truncated"):
        loads_scene(data[:-10])


def test_malformed_header():
    with pytest.raises(ParseError, match="magic"):
        loads_scene(b"not a ply file at all")
    with pytest.raises(ParseError, match="format"):
        loads_scene(b"ply\nformat ascii 1.0\nend_header\n")


def test_missing_required_attribute(rng):
    data = _legacy_ply_bytes(2, rng).replace(
        b"property float opacity\n", b"")
    # payload no longer matches the header layout either way; the missing
    # attribute should be reported first
    with pytest.raises(ParseError):
        loads_scene(data)


def test_nonfinite_value_names_element(rng):
    scene = random_scene(rng, 3)
    data = bytearray(dumps_scene(scene))
    # corrupt x of element 1 with a NaN
    header_end = bytes(data).index(b"end_header\n") + len(b"end_header\n")
    stride = 4 * (14 + LANG_DIM)
    data[header_end + stride:header_end + stride + 4] = np.float32(
        np.nan).tobytes()
    with pytest.raises(ParseError, match="element 1"):
        loads_scene(bytes(data))


def test_offnorm_quaternions_renormalized(rng, tmp_path):
    scene = random_scene(rng, 3)
    scene.rotations = (scene.rotations * 3.0).astype(np.float32)
    with pytest.raises(ValidationError):
        scene.validate()
    path = tmp_path / "q.ply"
    scene.rotations /= np.linalg.norm(scene.rotations, axis=1, keepdims=True)
    save_scene(scene, path)
    raw = bytearray(path.read_bytes())
    header_end = bytes(raw).index(b"end_header\n") + len(b"end_header\n")
    # scale rot_0..rot_3 of element 0 by 2 (offsets 10..13 within the record)
    for j in range(10, 14):
        off = header_end + 4 * j
        val = np.frombuffer(bytes(raw[off:off + 4]), "<f4")[0]
        raw[off:off + 4] = np.float32(val * 2.0).tobytes()
    back = loads_scene(bytes(raw))
    norms = np.linalg.norm(back.rotations.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-5)


def test_zero_quaternion_rejected(rng, tmp_path):
    scene = random_scene(rng, 2)
    scene.rotations /= np.linalg.norm(scene.rotations, axis=1, keepdims=True)
    path = tmp_path / "q0.ply"
    save_scene(scene, path)
    raw = bytearray(path.read_bytes())
    header_end = bytes(raw).index(b"end_header\n") + len(b"end_header\n")
    for j in range(10, 14):
        off = header_end + 4 * j
        raw[off:off + 4] = np.float32(0.0).tobytes()
    with pytest.raises(ParseError, match="element 0"):
        loads_scene(bytes(raw))


def test_scene_invariant_checks(rng):
    scene = random_scene(rng, 4)
    scene.colors[1, 0] = 1.5
    with pytest.raises(ValidationError, match="color"):
        scene.validate()
    scene = random_scene(rng, 4)
    scene.lang = scene.lang[:, :32]
    with pytest.raises(ValidationError, match="lang"):
        scene.validate()


# --- object_box ------------------------------------------------------------

def test_object_box_two_points():
    scene = GaussianScene(
        np.array([[0, 0, 0], [2, 0, 0]], float), np.zeros((2, 3)),
        np.tile([1, 0, 0, 0], (2, 1)).astype(float), np.full((2, 3), 0.5),
        np.zeros(2), np.zeros((2, LANG_DIM)))
    box = object_box(scene, [0, 1])
    assert np.allclose(box.center, [1, 0, 0])
    assert np.allclose(box.half_extents, [1, 0, 0])


def test_object_box_single_member(rng):
    scene = random_scene(rng, 5)
    box = object_box(scene, [3])
    assert np.allclose(box.center, scene.positions[3])
    assert np.allclose(box.half_extents, 0.0)


def _oracle_trimmed_box(points):
    """Brute-force rank-percentile trim, written independently."""
    kept = np.ones(len(points), bool)
    for axis in range(3):
        vals = np.sort(points[:, axis])
        lo = vals[int(np.floor(0.02 * (len(vals) - 1)))]
        hi = vals[int(np.ceil(0.98 * (len(vals) - 1)))]
        kept &= (points[:, axis] >= lo) & (points[:, axis] <= hi)
    pts = points[kept]
    center = pts.mean(axis=0)
    return center, np.abs(pts - center).max(axis=0)


def test_object_box_outlier_trim(rng):
    pts = rng.normal(size=(100, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts = np.concatenate([pts, [[100.0, 0.0, 0.0]]])
    n = len(pts)
    scene = GaussianScene(
        pts, np.zeros((n, 3)), np.tile([1, 0, 0, 0], (n, 1)).astype(float),
        np.full((n, 3), 0.5), np.zeros(n), np.zeros((n, LANG_DIM)))
    box = object_box(scene, np.arange(n))
    center, half = _oracle_trimmed_box(pts.astype(np.float64))
    assert np.allclose(box.center, center)
    assert np.allclose(box.half_extents, half)
    # the outlier is gone: the box is roughly the unit ball
    assert box.half_extents.max() <= 1.05


def test_object_box_translation_equivariance(rng):
    for _ in range(10):
        scene = random_scene(rng, 40, dtype=np.float64)
        idx = rng.choice(40, 17, replace=False)
        shift = rng.normal(size=3)
        box = object_box(scene, idx)
        shifted = scene.copy()
        shifted.positions = shifted.positions + shift
        box2 = object_box(shifted, idx)
        assert np.allclose(box2.center, box.center + shift, atol=1e-12)
        assert np.allclose(box2.half_extents, box.half_extents, atol=1e-12)


def test_object_box_errors(rng):
    scene = random_scene(rng, 5)
    with pytest.raises(ValidationError):
        object_box(scene, [])
    with pytest.raises(ValidationError):
        object_box(scene, [7])


# --- camera ----------------------------------------------------------------

def test_camera_validation():
    with pytest.raises(ValidationError):
        Camera(fx=-1, fy=1, cx=0, cy=0, width=4, height=4,
               rotation=np.eye(3), translation=np.zeros(3))
    with pytest.raises(ValidationError):
        Camera(fx=1, fy=1, cx=0, cy=0, width=0, height=4,
               rotation=np.eye(3), translation=np.zeros(3))
    skew = np.eye(3)
    skew[0, 1] = 1e-3
    with pytest.raises(ValidationError, match="orthonormal"):
        Camera(fx=1, fy=1, cx=0, cy=0, width=4, height=4,
               rotation=skew, translation=np.zeros(3))


def test_look_at_geometry():
    cam = look_at([0, -5, 0], [0, 0, 0], fx=20, fy=20, cx=8, cy=8,
                  width=16, height=16)
    # target sits on the view axis, in front of the camera
    target_cam = cam.to_camera(np.array([[0.0, 0.0, 0.0]]))[0]
    assert target_cam[2] < 0
    assert abs(target_cam[0]) < 1e-12 and abs(target_cam[1]) < 1e-12
    assert np.allclose(cam.center, [0, -5, 0])
    assert abs(np.linalg.det(cam.rotation) - 1.0) < 1e-12
