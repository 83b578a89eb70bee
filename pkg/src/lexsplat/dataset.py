"""On-disk dataset plumbing: camera lists and feature-map manifests.

Cameras are stored as JSON: a top-level ``cameras`` array of objects
with id, intrinsics, image size, and a 3x4 row-major world-to-camera
matrix.  Feature directories carry a ``manifest.txt`` pairing each
container file with its camera id, one ``<filename> <camera_id>`` pair
per line.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ParseError
from .scene import Camera

MANIFEST_NAME = "manifest.txt"


def save_cameras(cameras, path) -> None:
    entries = []
    for cam in cameras:
        w2c = np.concatenate(
            [cam.rotation, cam.translation[:, None]], axis=1)
        entries.append({
            "id": cam.camera_id, "fx": cam.fx, "fy": cam.fy,
            "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "world_to_camera": w2c.tolist(),
        })
    with open(path, "w") as fh:
        json.dump({"cameras": entries}, fh, indent=2)
        fh.write("\n")


def load_cameras(path) -> list[Camera]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if "cameras" not in doc:
        raise ParseError(f"{path}: missing top-level 'cameras' array")
    cameras = []
    for i, entry in enumerate(doc["cameras"]):
        try:
            w2c = np.asarray(entry["world_to_camera"], dtype=np.float64)
            if w2c.shape != (3, 4):
                raise ParseError(
                    f"{path}: camera {i}: world_to_camera must be 3x4")
            cameras.append(Camera(
                fx=float(entry["fx"]), fy=float(entry["fy"]),
                cx=float(entry["cx"]), cy=float(entry["cy"]),
                width=int(entry["width"]), height=int(entry["height"]),
                rotation=w2c[:, :3], translation=w2c[:, 3],
                camera_id=str(entry.get("id", f"cam-{i}"))))
        except KeyError as exc:
            raise ParseError(f"{path}: camera {i}: missing field {exc}") from exc
    return cameras


def camera_by_id(cameras, camera_id: str) -> Camera:
    for cam in cameras:
        if cam.camera_id == camera_id:
            return cam
    raise ParseError(f"no camera with id {camera_id!r}")


def read_manifest(directory) -> list[tuple[str, str]]:
    """(filename, camera_id) pairs from a directory's manifest."""
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ParseError(f"missing {MANIFEST_NAME} in {directory}")
    pairs = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(
                    f"{path}:{line_no}: expected '<file> <camera_id>'")
            pairs.append((parts[0], parts[1]))
    return pairs


def write_manifest(directory, pairs) -> None:
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        for filename, camera_id in pairs:
            fh.write(f"{filename} {camera_id}\n")
