"""Gaussian scene representation, camera model, and point-file serialization.

A scene is a struct-of-arrays over N Gaussians: position, log-scale,
rotation quaternion, diffuse RGB color, opacity logit, and a 64-dim
language embedding per Gaussian.  World covariance is
``R(q) @ diag(exp(s))**2 @ R(q).T``, which stays positive definite under
unconstrained optimization.

Cameras use the convention: ``x_cam = R @ x_world + t`` with x right,
y up, and the view direction along -z.  Depth of a point is ``-z_cam``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

LANG_DIM = 64

_QUAT_NORM_TOL = 1e-5
_ROT_ORTHO_TOL = 1e-6

# Trim band used by object_box, as fractions of the per-axis rank range.
BOX_TRIM_LO = 0.02
BOX_TRIM_HI = 0.98


@dataclass
class GaussianScene:
    """Struct-of-arrays container for N language-embedded Gaussians."""

    positions: np.ndarray      # (N, 3) world-space means
    scales: np.ndarray         # (N, 3) log of covariance axis lengths
    rotations: np.ndarray      # (N, 4) unit quaternions (w, x, y, z)
    colors: np.ndarray         # (N, 3) diffuse RGB in [0, 1]
    opacity_logits: np.ndarray  # (N,) opacity = sigmoid(logit)
    lang: np.ndarray           # (N, LANG_DIM) language embeddings

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions))
        self.scales = np.atleast_2d(np.asarray(self.scales))
        self.rotations = np.atleast_2d(np.asarray(self.rotations))
        self.colors = np.atleast_2d(np.asarray(self.colors))
        self.opacity_logits = np.asarray(self.opacity_logits).reshape(-1)
        self.lang = np.atleast_2d(np.asarray(self.lang))
        if self.positions.size == 0:
            self.positions = self.positions.reshape(0, 3)
            self.scales = self.scales.reshape(0, 3)
            self.rotations = self.rotations.reshape(0, 4)
            self.colors = self.colors.reshape(0, 3)
            self.lang = self.lang.reshape(0, LANG_DIM)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def opacities(self) -> np.ndarray:
        """Opacities in (0, 1), computed from the logits."""
        return 1.0 / (1.0 + np.exp(-self.opacity_logits.astype(np.float64)))

    def validate(self) -> None:
        """Raise ValidationError unless every scene invariant holds."""
        n = self.count
        shapes = {
            "positions": (n, 3),
            "scales": (n, 3),
            "rotations": (n, 4),
            "colors": (n, 3),
            "opacity_logits": (n,),
            "lang": (n, LANG_DIM),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise ValidationError(
                    f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise ValidationError(
                    f"non-finite value in {name} at Gaussian {bad}")
        if n:
            norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > _QUAT_NORM_TOL):
                bad = int(np.argmax(np.abs(norms - 1.0)))
                raise ValidationError(
                    f"rotation {bad} has norm {norms[bad]:.8f}, expected 1")
            if self.colors.min() < 0.0 or self.colors.max() > 1.0:
                bad = int(np.argwhere(
                    (self.colors < 0.0) | (self.colors > 1.0))[0][0])
                raise ValidationError(
                    f"color of Gaussian {bad} outside [0, 1]")

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.positions.copy(), self.scales.copy(), self.rotations.copy(),
            self.colors.copy(), self.opacity_logits.copy(), self.lang.copy())

    def select(self, indices) -> "GaussianScene":
        """Sub-scene containing only the given Gaussians, in index order."""
        idx = np.asarray(indices, dtype=np.int64)
        return GaussianScene(
            self.positions[idx], self.scales[idx], self.rotations[idx],
            self.colors[idx], self.opacity_logits[idx], self.lang[idx])

    def without(self, indices) -> "GaussianScene":
        """Sub-scene with the given Gaussians removed."""
        keep = np.ones(self.count, dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = False
        return self.select(np.flatnonzero(keep))


def empty_scene() -> GaussianScene:
    return GaussianScene(
        np.zeros((0, 3), np.float32), np.zeros((0, 3), np.float32),
        np.zeros((0, 4), np.float32), np.zeros((0, 3), np.float32),
        np.zeros((0,), np.float32), np.zeros((0, LANG_DIM), np.float32))


@dataclass
class Camera:
    """Pinhole camera: intrinsics, image size, and a rigid world-to-camera
    transform.  ``rotation`` must be a proper rotation matrix (orthonormal
    within 1e-6, det +1)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray       # (3, 3) world-to-camera rotation
    translation: np.ndarray    # (3,) world-to-camera translation
    camera_id: str = ""

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (self.width >= 1 and self.height >= 1):
            raise ValidationError("image size must be at least 1x1")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > _ROT_ORTHO_TOL:
            raise ValidationError(
                f"rotation is not orthonormal (max deviation {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValidationError("rotation must have determinant +1")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) world points into the camera frame."""
        return points @ self.rotation.T + self.translation


def look_at(position, target, up=(0.0, 0.0, 1.0), *, fx, fy, cx, cy,
            width, height, camera_id="") -> Camera:
    """Build a camera at ``position`` whose view axis passes through
    ``target``.  Falls back to a y-up reference if the view direction is
    parallel to ``up``."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    dist = np.linalg.norm(fwd)
    if dist < 1e-12:
        raise ValidationError("look_at target coincides with camera position")
    fwd = fwd / dist
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(fwd, up)) < 1e-8:
        up = np.array([0.0, 1.0, 0.0])
        if np.linalg.norm(np.cross(fwd, up)) < 1e-8:
            up = np.array([1.0, 0.0, 0.0])
    x_c = np.cross(fwd, up)
    x_c /= np.linalg.norm(x_c)
    z_c = -fwd
    y_c = np.cross(z_c, x_c)
    rot = np.stack([x_c, y_c, z_c], axis=0)
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
                  rotation=rot, translation=-rot @ position,
                  camera_id=camera_id)


@dataclass
class ObjectBox:
    """Axis-aligned box summarizing a set of member Gaussians."""

    center: np.ndarray
    half_extents: np.ndarray
    member_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def _trim_bounds(values: np.ndarray) -> tuple[float, float]:
    # Rank-based percentile band; index rounding keeps small sets intact.
    order = np.sort(values)
    n = order.size
    lo = order[int(np.floor(BOX_TRIM_LO * (n - 1)))]
    hi = order[int(np.ceil(BOX_TRIM_HI * (n - 1)))]
    return lo, hi


def object_box(scene: GaussianScene, member_indices) -> ObjectBox:
    """Center and bounding box of the member Gaussians' positions, after
    trimming per-axis outliers to the [2nd, 98th] rank-percentile band."""
    idx = np.asarray(member_indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValidationError("object_box requires at least one member")
    if idx.min() < 0 or idx.max() >= scene.count:
        raise ValidationError("member index out of range")
    pts = scene.positions[idx].astype(np.float64)
    keep = np.ones(len(pts), dtype=bool)
    for axis in range(3):
        lo, hi = _trim_bounds(pts[:, axis])
        keep &= (pts[:, axis] >= lo) & (pts[:, axis] <= hi)
    kept = pts[keep] if keep.any() else pts
    center = kept.mean(axis=0)
    half = np.abs(kept - center).max(axis=0)
    return ObjectBox(center=center, half_extents=half, member_indices=idx)


# ---------------------------------------------------------------------------
# Point-file serialization (binary little-endian PLY with f_lang_* extras)

_BASE_PROPS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
_LANG_PROPS = [f"f_lang_{i}" for i in range(LANG_DIM)]

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
}


def dumps_scene(scene: GaussianScene) -> bytes:
    """Serialize a scene as a binary little-endian splat point file.

    All attributes are stored as float32; loading the result reproduces
    a float32 scene bit-exactly.
    """
    scene.validate()
    names = _BASE_PROPS + _LANG_PROPS
    dtype = np.dtype([(name, "<f4") for name in names])
    rec = np.empty(scene.count, dtype=dtype)
    cols = np.concatenate([
        scene.positions, scene.colors, scene.opacity_logits[:, None],
        scene.scales, scene.rotations, scene.lang], axis=1).astype(np.float32)
    for j, name in enumerate(names):
        rec[name] = cols[:, j]
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0",
         f"element vertex {scene.count}"]
        + [f"property float {name}" for name in names]
        + ["end_header", ""])
    return header.encode("ascii") + rec.tobytes()


def save_scene(scene: GaussianScene, path) -> None:
    """Write a scene as a binary little-endian splat point file."""
    data = dumps_scene(scene)
    with open(path, "wb") as fh:
        fh.write(data)


def _parse_ply_header(fh) -> tuple[int, list[tuple[str, str]]]:
    line = fh.readline()
    if line.strip() != b"ply":
        raise ParseError("not a PLY file (missing 'ply' magic)")
    fmt = fh.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise ParseError(f"unsupported PLY format line: {fmt.decode(errors='replace')}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        raw = fh.readline()
        if not raw:
            raise ParseError("unterminated PLY header")
        line = raw.strip().decode("ascii", errors="replace")
        if line == "end_header":
            break
        if line.startswith("comment") or not line:
            continue
        parts = line.split()
        if parts[0] == "element":
            if parts[1] == "vertex":
                in_vertex = True
                try:
                    count = int(parts[2])
                except (IndexError, ValueError):
                    raise ParseError(f"malformed element line: {line}")
            else:
                in_vertex = False
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ParseError("list properties are not supported")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ParseError(f"malformed property line: {line}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None:
        raise ParseError("PLY header declares no vertex element")
    if not props:
        raise ParseError("vertex element declares no properties")
    return count, props


def loads_scene(data: bytes) -> GaussianScene:
    """Parse a splat point file from bytes.  Files without f_lang_*
    attributes load with all-zero language embeddings.  Quaternions that
    drift beyond the unit-norm tolerance are renormalized; in-tolerance
    values keep their exact stored bits so save/load round-trips are
    bit-exact."""
    fh = io.BytesIO(data)
    count, props = _parse_ply_header(fh)
    dtype = np.dtype([(name, code) for name, code in props])
    payload = fh.read()
    expected = count * dtype.itemsize
    if len(payload) < expected:
        raise ParseError(
            f"vertex data truncated: header declares {count} points "
            f"({expected} bytes), file holds {len(payload)}")
    rec = np.frombuffer(payload[:expected], dtype=dtype)

    names = {name for name, _ in props}
    missing = [p for p in _BASE_PROPS if p not in names]
    if missing:
        raise ParseError(f"missing required attributes: {', '.join(missing)}")

    def grab(cols):
        return np.stack([rec[c].astype(np.float32) for c in cols], axis=1)

    positions = grab(["x", "y", "z"])
    colors = grab([f"f_dc_{i}" for i in range(3)])
    opacity = rec["opacity"].astype(np.float32)
    scales = grab([f"scale_{i}" for i in range(3)])
    rotations = grab([f"rot_{i}" for i in range(4)])
    if all(p in names for p in _LANG_PROPS):
        lang = grab(_LANG_PROPS)
    elif any(p in names for p in _LANG_PROPS):
        have = sum(p in names for p in _LANG_PROPS)
        raise ParseError(
            f"partial language attributes: {have} of {LANG_DIM} f_lang_* present")
    else:
        lang = np.zeros((count, LANG_DIM), dtype=np.float32)

    if count:
        for name, arr in [("position", positions), ("color", colors),
                          ("opacity", opacity), ("scale", scales),
                          ("rotation", rotations), ("lang", lang)]:
            finite = np.isfinite(arr).reshape(count, -1).all(axis=1)
            if not finite.all():
                raise ParseError(
                    f"non-finite {name} at element "
                    f"{int(np.flatnonzero(~finite)[0])}")

        norms = np.linalg.norm(rotations.astype(np.float64), axis=1)
        degenerate = norms < 1e-8
        if degenerate.any():
            raise ParseError(
                f"zero-norm rotation at element {int(np.flatnonzero(degenerate)[0])}")
        off = np.abs(norms - 1.0) > _QUAT_NORM_TOL
        if off.any():
            rotations = rotations.copy()
            rotations[off] = (rotations[off] / norms[off, None]).astype(np.float32)

    scene = GaussianScene(positions, scales, rotations, colors, opacity, lang)
    scene.validate()
    return scene


def load_scene(path) -> GaussianScene:
    """Read a splat point file from disk.  See loads_scene."""
    with open(path, "rb") as fh:
        return loads_scene(fh.read())
