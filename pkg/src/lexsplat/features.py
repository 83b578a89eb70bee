"""Dense 2D language-feature supervision: dimensionality reduction to 64
channels and mask-guided boundary refinement.

Feature maps arrive at the extractor's native dimension (e.g. 512),
are projected to 64 dims through a scene-level PCA basis, and are then
sharpened by averaging features inside fine segmentation masks so that
supervision respects object boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .scene import LANG_DIM

# Variances at or below this fraction of the leading variance count as
# numerically zero when reporting the effective rank of a basis.
_RANK_TOL = 1e-8


@dataclass
class FeatureMap:
    """Per-pixel feature plane paired with the camera that produced it."""

    data: np.ndarray            # (H, W, dim) float
    source_camera_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValidationError(
                f"feature map must be HxWxD, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("feature map contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass
class MaskSet:
    """Binary masks over one image; masks may overlap."""

    masks: list = field(default_factory=list)   # list of (H, W) bool arrays

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        for m in self.masks:
            if m.ndim != 2:
                raise ValidationError("masks must be 2-D")
            if self.masks and m.shape != self.masks[0].shape:
                raise ValidationError("masks in a set must share one shape")

    def __len__(self) -> int:
        return len(self.masks)


@dataclass
class PcaBasis:
    """Rank-k linear projection fitted to feature samples.

    ``components`` rows are orthonormal; ``explained_variance`` is sorted
    non-increasing.  ``effective_rank`` counts variances that are not
    numerically zero, flagging rank-deficient inputs.
    """

    mean: np.ndarray                # (dim,)
    components: np.ndarray          # (k, dim)
    explained_variance: np.ndarray  # (k,)
    effective_rank: int = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(samples: np.ndarray, k: int = LANG_DIM) -> PcaBasis:
    """Fit a rank-k PCA basis to (n, dim) feature samples.

    Uses the covariance eigendecomposition; component signs are fixed
    deterministically (largest-magnitude entry positive) so refits on
    identical input are byte-identical.  Rank-deficient input keeps an
    orthonormal completion of the null space as trailing components,
    with the deficiency reported via ``effective_rank``.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"samples must be 2-D, got shape {X.shape}")
    n, dim = X.shape
    if n < k:
        raise ValidationError(f"need at least {k} samples, got {n}")
    if dim < k:
        raise ValidationError(f"sample dim {dim} is below the target rank {k}")

    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals, kind="stable")[::-1][:k]
    variances = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order].T

    # deterministic sign convention
    pivot = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivot])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]

    lead = variances[0] if variances[0] > 0 else 1.0
    rank = int(np.sum(variances > _RANK_TOL * max(lead, 1.0)))
    return PcaBasis(mean=mean, components=components,
                    explained_variance=variances, effective_rank=rank)


def project_features(fmap: FeatureMap, basis: PcaBasis) -> FeatureMap:
    """Project a raw feature map through the basis: v -> C (v - mean)."""
    if fmap.dim != basis.dim:
        raise ValidationError(
            f"feature dim {fmap.dim} does not match basis dim {basis.dim}")
    flat = fmap.data.reshape(-1, fmap.dim).astype(np.float64)
    proj = (flat - basis.mean) @ basis.components.T
    return FeatureMap(proj.reshape(fmap.height, fmap.width, basis.k),
                      source_camera_id=fmap.source_camera_id)


def project_vector(vec: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Project a single dim-vector through the basis."""
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if v.size != basis.dim:
        raise ValidationError(
            f"vector dim {v.size} does not match basis dim {basis.dim}")
    return basis.components @ (v - basis.mean)


def refine_with_masks(fmap: FeatureMap, masks: MaskSet) -> FeatureMap:
    """Average features within fine masks to sharpen semantic boundaries.

    Each covered pixel is assigned to its smallest covering mask (ties to
    the lower mask index); pixels sharing an assignment take the mean of
    the input features over exactly that group, so the operation is
    idempotent.  Uncovered pixels pass through unchanged.
    """
    if len(masks) == 0:
        return FeatureMap(fmap.data.copy(), fmap.source_camera_id)
    h, w = masks.masks[0].shape
    if (h, w) != (fmap.height, fmap.width):
        raise ValidationError(
            f"mask shape {(h, w)} does not match feature map "
            f"{(fmap.height, fmap.width)}")

    areas = np.array([int(m.sum()) for m in masks.masks])
    # smallest covering mask per pixel; iterate from largest to smallest
    # so later (smaller) masks overwrite earlier assignments
    assign = np.full((h, w), -1, dtype=np.int64)
    for mi in sorted(range(len(masks)), key=lambda i: (-areas[i], -i)):
        assign[masks.masks[mi]] = mi

    out = fmap.data.astype(np.float64).copy()
    flat = fmap.data.reshape(-1, fmap.dim).astype(np.float64)
    assign_flat = assign.reshape(-1)
    for mi in np.unique(assign_flat):
        if mi < 0:
            continue
        members = assign_flat == mi
        out.reshape(-1, fmap.dim)[members] = flat[members].mean(axis=0)
    return FeatureMap(out, source_camera_id=fmap.source_camera_id)
