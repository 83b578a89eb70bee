"""Optimization of per-Gaussian language embeddings against rendered
feature supervision.

Only the 64-dim embeddings move; geometry, color, and opacity are left
bit-exactly untouched.  The loss per view is an L1 term plus a cosine
alignment term between the rendered feature image and the supervision
map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backward import OutputGradients, render_backward
from .errors import ValidationError
from .features import FeatureMap
from .optim import Adam
from .rasterizer import render
from .scene import Camera, GaussianScene, LANG_DIM

_NORM_EPS = 1e-12


@dataclass
class EmbeddingTrainConfig:
    epochs: int = 30
    learning_rate: float = 2.5e-3
    # optional exponential decay target; None keeps the rate constant
    final_learning_rate: float | None = None
    l1_weight: float = 1.0
    cosine_weight: float = 0.2

    def rate_at(self, epoch: int) -> float:
        if self.final_learning_rate is None or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        return self.learning_rate * (
            self.final_learning_rate / self.learning_rate) ** frac


def _feature_loss_and_grad(rendered: np.ndarray, target: np.ndarray,
                           cfg: EmbeddingTrainConfig):
    """Mean L1 + cosine loss over pixels; returns (loss, d loss / d rendered).

    Pixels where either vector has (near-)zero norm contribute zero to the
    cosine term, matching the zero-vector similarity convention.
    """
    h, w, d = rendered.shape
    n_px = h * w
    diff = rendered - target
    l1 = np.abs(diff).mean()
    grad = cfg.l1_weight * np.sign(diff) / (n_px * d)

    fn = np.linalg.norm(rendered, axis=2)
    tn = np.linalg.norm(target, axis=2)
    ok = (fn > _NORM_EPS) & (tn > _NORM_EPS)
    dot = (rendered * target).sum(axis=2)
    cos = np.zeros((h, w))
    np.divide(dot, fn * tn, out=cos, where=ok)
    cos_loss = (1.0 - cos)[ok].sum() / n_px if ok.any() else 0.0

    # d(1 - cos)/df = -(t / (|f||t|) - f * dot / (|f|^3 |t|))
    safe_fn = np.where(ok, fn, 1.0)
    safe_tn = np.where(ok, tn, 1.0)
    cos_grad = -(target / (safe_fn * safe_tn)[:, :, None]
                 - rendered * (dot / (safe_fn ** 3 * safe_tn))[:, :, None])
    cos_grad[~ok] = 0.0
    grad += cfg.cosine_weight * cos_grad / n_px

    loss = cfg.l1_weight * l1 + cfg.cosine_weight * cos_loss
    return loss, grad


def train_language_embeddings(scene: GaussianScene,
                              views: list[tuple[Camera, FeatureMap]],
                              config: EmbeddingTrainConfig | None = None,
                              history: list | None = None) -> GaussianScene:
    """Return a scene with optimized language embeddings.

    ``views`` pairs cameras with 64-dim supervision maps.  All non-language
    arrays of the result are the same objects' bit-exact copies.  When a
    list is passed as ``history`` it receives the mean per-view loss of
    each epoch.
    """
    if not views:
        raise ValidationError("training requires at least one view")
    cfg = config or EmbeddingTrainConfig()
    for cam, fmap in views:
        if fmap.dim != LANG_DIM:
            raise ValidationError(
                f"supervision for camera {cam.camera_id!r} has dim "
                f"{fmap.dim}, expected {LANG_DIM}")
        if (fmap.height, fmap.width) != (cam.height, cam.width):
            raise ValidationError(
                f"supervision size {(fmap.height, fmap.width)} does not "
                f"match camera {cam.camera_id!r}")

    out = scene.copy()
    lang = out.lang.astype(np.float64)
    optimizer = Adam()
    for epoch in range(cfg.epochs):
        rate = cfg.rate_at(epoch)
        epoch_losses = []
        for cam, fmap in views:
            out.lang = lang
            rendered = render(out, cam, ("feature",)).feature
            loss, up_feature = _feature_loss_and_grad(
                rendered, fmap.data.astype(np.float64), cfg)
            epoch_losses.append(loss)
            grads = render_backward(
                out, cam, ("feature",), OutputGradients(feature=up_feature))
            lang -= rate * optimizer.direction("lang", grads.lang)
        if history is not None:
            history.append(float(np.mean(epoch_losses)))
    out.lang = lang.astype(scene.lang.dtype) \
        if np.issubdtype(scene.lang.dtype, np.floating) else lang
    return out
