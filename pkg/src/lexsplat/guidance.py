"""Guidance-provider contract: how diffusion-style gradients enter the
editing optimizer.

A provider maps a request (4 rendered views, their frozen pre-edit
conditioning renders, camera poses, a noise level, and an instruction
prompt) to 4 per-pixel residual images.  Residuals point in the
direction that increases disagreement with the provider's model, so the
optimizer descends along them.  Every built-in provider is deterministic
given (request, noise_seed).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GuidanceError, ValidationError
from .scene import Camera

NOISE_LEVEL_RANGE = (0.02, 0.2)
VIEWS_PER_REQUEST = 4

CAP_IMAGE_EDIT = "image_edit"   # per-view residuals (views independent)
CAP_MULTI_VIEW = "multi_view"   # joint residuals over all 4 views

# CFG weights forwarded untouched to image-editing backends
DEFAULT_IMAGE_EDIT_CONFIG = {"cfg_image": "1.5", "cfg_text": "7.5"}


def poses_from_cameras(cameras) -> np.ndarray:
    """(4, 3, 4) world-to-camera [R|t] blocks from Camera objects."""
    out = np.zeros((len(cameras), 3, 4), dtype=np.float64)
    for i, cam in enumerate(cameras):
        out[i, :, :3] = cam.rotation
        out[i, :, 3] = cam.translation
    return out


@dataclass
class GuidanceRequest:
    """One editing-step query against a guidance provider."""

    rendered_views: list          # 4 x (H, W, 3) current renders
    original_views: list          # 4 x (H, W, 3) frozen pre-edit renders
    poses: np.ndarray             # (4, 3, 4) world-to-camera [R|t]
    noise_level: float            # t in NOISE_LEVEL_RANGE
    noise_seed: int
    prompt: str
    description: str = ""
    provider_config: dict = field(default_factory=dict)
    camera_ids: tuple = ()        # in-process only, not serialized

    def __post_init__(self):
        self.rendered_views = [np.asarray(v, dtype=np.float64)
                               for v in self.rendered_views]
        self.original_views = [np.asarray(v, dtype=np.float64)
                               for v in self.original_views]
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if len(self.rendered_views) != VIEWS_PER_REQUEST \
                or len(self.original_views) != VIEWS_PER_REQUEST:
            raise ValidationError(
                f"guidance requests carry exactly {VIEWS_PER_REQUEST} views")
        if self.poses.shape != (VIEWS_PER_REQUEST, 3, 4):
            raise ValidationError(
                f"poses must be (4, 3, 4), got {self.poses.shape}")
        lo, hi = NOISE_LEVEL_RANGE
        if not lo <= self.noise_level <= hi:
            raise ValidationError(
                f"noise level {self.noise_level} outside [{lo}, {hi}]")
        for r, o in zip(self.rendered_views, self.original_views):
            if r.ndim != 3 or r.shape[2] != 3:
                raise ValidationError("views must be (H, W, 3) images")
            if r.shape != o.shape:
                raise ValidationError(
                    "rendered and original views must be shape-matched")
        if not self.camera_ids:
            self.camera_ids = tuple(
                f"view-{i}" for i in range(VIEWS_PER_REQUEST))


def make_request(rendered_views, original_views, cameras: list[Camera],
                 noise_level: float, noise_seed: int, prompt: str,
                 provider_config: dict | None = None,
                 description: str = "") -> GuidanceRequest:
    """Assemble a request from Camera objects."""
    return GuidanceRequest(
        rendered_views=rendered_views, original_views=original_views,
        poses=poses_from_cameras(cameras), noise_level=noise_level,
        noise_seed=noise_seed, prompt=prompt, description=description,
        provider_config=dict(provider_config or {}),
        camera_ids=tuple(c.camera_id or f"view-{i}"
                         for i, c in enumerate(cameras)))


@dataclass
class GuidanceResponse:
    """Per-view residual images, shape-matched to the request."""

    residuals: list               # 4 x (H, W, 3)

    def __post_init__(self):
        self.residuals = [np.asarray(r, dtype=np.float64)
                          for r in self.residuals]

    def validate_against(self, request: GuidanceRequest) -> None:
        if len(self.residuals) != VIEWS_PER_REQUEST:
            raise GuidanceError(
                f"expected {VIEWS_PER_REQUEST} residuals, "
                f"got {len(self.residuals)}")
        for res, view in zip(self.residuals, request.rendered_views):
            if res.shape != view.shape:
                raise GuidanceError(
                    f"residual shape {res.shape} does not match view "
                    f"shape {view.shape}")
            if not np.all(np.isfinite(res)):
                raise GuidanceError("non-finite residual from provider")


def add_noise(image: np.ndarray, noise_level: float, seed: int,
              sigma: float | None = None) -> np.ndarray:
    """x + sigma_t * eps with seeded standard-normal eps.

    The default schedule is the identity, sigma_t = t; providers with
    their own schedule pass ``sigma`` explicitly.
    """
    lo, hi = NOISE_LEVEL_RANGE
    if not lo <= noise_level <= hi:
        raise ValidationError(
            f"noise level {noise_level} outside [{lo}, {hi}]")
    img = np.asarray(image, dtype=np.float64)
    sigma_t = noise_level if sigma is None else sigma
    rng = np.random.Generator(np.random.Philox(seed))
    return img + sigma_t * rng.standard_normal(img.shape)


class GuidanceProvider:
    """Interface all providers implement.  ``capabilities`` advertises the
    residual contracts the provider supports."""

    name = "provider"
    capabilities: frozenset = frozenset({CAP_IMAGE_EDIT, CAP_MULTI_VIEW})

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        raise NotImplementedError


class NullProvider(GuidanceProvider):
    """Zero residuals: composing this into any edit leaves the scene
    unchanged."""

    name = "null"

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        resp = GuidanceResponse(
            [np.zeros_like(v) for v in request.rendered_views])
        resp.validate_against(request)
        return resp


class PhotometricMockProvider(GuidanceProvider):
    """Noise-free oracle: residual = rendered - target, i.e. the exact
    gradient of 0.5 * ||rendered - target||^2 per view.

    Targets are keyed by camera id; a request for an unknown id fails.
    """

    name = "photometric"

    def __init__(self, targets: dict[str, np.ndarray]):
        self.targets = {k: np.asarray(v, dtype=np.float64)
                        for k, v in targets.items()}

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        residuals = []
        for cam_id, view in zip(request.camera_ids, request.rendered_views):
            if cam_id not in self.targets:
                raise GuidanceError(f"no target image for camera {cam_id!r}")
            target = self.targets[cam_id]
            if target.shape != view.shape:
                raise GuidanceError(
                    f"target for {cam_id!r} has shape {target.shape}, "
                    f"view has {view.shape}")
            residuals.append(view - target)
        resp = GuidanceResponse(residuals)
        resp.validate_against(request)
        return resp


class FileGuidanceProvider(PhotometricMockProvider):
    """Photometric guidance toward precomputed edited images on disk.

    Looks up ``<camera_id>.tgrf`` (float container) or ``<camera_id>.png``
    in the target directory, caching loads.  Enables end-to-end edits with
    zero model dependencies.
    """

    name = "files"

    def __init__(self, directory):
        super().__init__({})
        self.directory = str(directory)

    def _load(self, cam_id: str) -> np.ndarray:
        tgrf = os.path.join(self.directory, f"{cam_id}.tgrf")
        png = os.path.join(self.directory, f"{cam_id}.png")
        if os.path.exists(tgrf):
            from .containers import read_feature_map
            return read_feature_map(tgrf).astype(np.float64)
        if os.path.exists(png):
            from PIL import Image
            with Image.open(png) as im:
                return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        raise GuidanceError(
            f"no target image for camera {cam_id!r} under {self.directory}")

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        for cam_id in request.camera_ids:
            if cam_id not in self.targets:
                self.targets[cam_id] = self._load(cam_id)
        return super().guide(request)
