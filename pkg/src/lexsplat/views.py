"""Camera ring selection around a target object.

Four views are placed on a circle about the object center: at 90 degree
spacing with a randomized start when the dataset sweeps (nearly) the
full circle, or evenly interpolated between the dataset's azimuth
bounds otherwise.  Radius and elevation follow the dataset medians, and
every camera looks at the object center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import ObjectBox, look_at

FULL_CIRCLE_COVERAGE_DEG = 300.0
MODE_FULL_CIRCLE = "full_circle"
MODE_BOUNDED_ARC = "bounded_arc"


@dataclass
class ViewRing:
    """Four cameras around a target, with the selection mode used."""

    cameras: list
    mode: str
    azimuths_deg: np.ndarray

    def __iter__(self):
        return iter(self.cameras)


def _dataset_geometry(box: ObjectBox, cameras) -> dict:
    centers = np.stack([cam.center for cam in cameras])
    rel = centers - box.center[None, :]
    azimuth = np.arctan2(rel[:, 1], rel[:, 0])
    horizontal = np.hypot(rel[:, 0], rel[:, 1])
    elevation = np.arctan2(rel[:, 2], horizontal)
    radius = np.linalg.norm(rel, axis=1)
    return {"azimuth": azimuth, "elevation": elevation, "radius": radius}


def _coverage_and_arc(azimuth: np.ndarray) -> tuple[float, float, float]:
    """Angular coverage plus the [start, end] of the occupied arc.

    The arc is the complement of the largest gap between consecutive
    (sorted, wrapped) azimuths; end >= start, possibly beyond pi.
    """
    az = np.sort(np.mod(azimuth, 2 * np.pi))
    if len(az) == 1:
        return 0.0, az[0], az[0]
    gaps = np.diff(np.concatenate([az, [az[0] + 2 * np.pi]]))
    widest = int(np.argmax(gaps))
    coverage = 2 * np.pi - gaps[widest]
    start = az[(widest + 1) % len(az)]
    end = start + coverage
    return coverage, start, end


def select_views(box: ObjectBox, dataset_cameras, *,
                 rng: np.random.Generator | None = None) -> ViewRing:
    """Choose four look-at cameras around the object.

    Full-circle mode (dataset azimuth coverage >= 300 degrees) places the
    cameras at 90 degree spacing with a seeded random starting azimuth;
    otherwise the four azimuths interpolate the dataset bounds evenly.
    Intrinsics are copied from the first dataset camera.
    """
    cams = list(dataset_cameras)
    if not cams:
        raise ValidationError("view selection needs at least one dataset camera")
    rng = rng or np.random.default_rng(0)
    geo = _dataset_geometry(box, cams)
    coverage, start, end = _coverage_and_arc(geo["azimuth"])
    radius = float(np.median(geo["radius"]))
    elevation = float(np.median(geo["elevation"]))
    if radius < 1e-9:
        raise ValidationError("dataset cameras coincide with the object center")

    if np.degrees(coverage) >= FULL_CIRCLE_COVERAGE_DEG:
        mode = MODE_FULL_CIRCLE
        base = rng.uniform(0.0, 2 * np.pi)
        azimuths = base + np.arange(4) * (np.pi / 2)
    else:
        mode = MODE_BOUNDED_ARC
        azimuths = np.linspace(start, end, 4)

    ref = cams[0]
    ring_cams = []
    cos_el, sin_el = np.cos(elevation), np.sin(elevation)
    for i, az in enumerate(azimuths):
        offset = radius * np.array(
            [np.cos(az) * cos_el, np.sin(az) * cos_el, sin_el])
        ring_cams.append(look_at(
            box.center + offset, box.center,
            fx=ref.fx, fy=ref.fy, cx=ref.cx, cy=ref.cy,
            width=ref.width, height=ref.height, camera_id=f"ring-{i}"))
    return ViewRing(cameras=ring_cams, mode=mode,
                    azimuths_deg=np.degrees(azimuths))
