"""Open-vocabulary retrieval over language-embedded Gaussians.

3D retrieval scores each Gaussian's raw embedding against a query by
cosine similarity; 2D relevance maps score the *rendered* feature image
instead (normalized after rendering).  Both are single-pass: one score
per Gaussian (or pixel) per query, no multi-scale recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rasterizer import render
from .scene import Camera, GaussianScene, LANG_DIM, ObjectBox, object_box

_NORM_EPS = 1e-12


@dataclass
class QueryEmbedding:
    """Unit-normalized 64-dim text query embedding with its source label."""

    vector: np.ndarray
    label: str = ""

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vec.size != LANG_DIM:
            raise ValidationError(
                f"query embedding has {vec.size} dims, expected {LANG_DIM}")
        if not np.all(np.isfinite(vec)):
            raise ValidationError("query embedding contains non-finite values")
        norm = np.linalg.norm(vec)
        self.vector = vec / norm if norm > _NORM_EPS else np.zeros(LANG_DIM)


@dataclass
class RetrievalResult:
    """Scores for every Gaussian plus the strict-threshold member set."""

    scores: np.ndarray            # (N,) in [-1, 1]
    member_indices: np.ndarray    # indices with score > tau
    tau: float
    box: ObjectBox | None         # None when no member passed the threshold


def cosine_scores(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row against the query; rows or queries
    with zero norm score 0.  This is the single scoring kernel used by
    every retrieval path."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    qn = np.linalg.norm(q)
    if qn <= _NORM_EPS:
        return np.zeros(len(vectors))
    rows = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    out = np.zeros(len(rows))
    ok = norms > _NORM_EPS
    out[ok] = rows[ok] @ q / (norms[ok] * qn)
    return np.clip(out, -1.0, 1.0)


def relevance_scores(scene: GaussianScene, query: QueryEmbedding) -> np.ndarray:
    """Per-Gaussian cosine similarity between embeddings and the query."""
    return cosine_scores(scene.lang, query.vector)


def retrieve(scene: GaussianScene, query: QueryEmbedding,
             tau: float = 0.6) -> RetrievalResult:
    """Gaussians whose relevance score strictly exceeds tau."""
    if not -1.0 <= tau <= 1.0:
        raise ValidationError(f"tau must lie in [-1, 1], got {tau}")
    scores = relevance_scores(scene, query)
    members = np.flatnonzero(scores > tau)
    box = object_box(scene, members) if len(members) else None
    return RetrievalResult(scores=scores, member_indices=members,
                           tau=tau, box=box)


def render_relevance_map(scene: GaussianScene, camera: Camera,
                         query: QueryEmbedding
                         ) -> tuple[np.ndarray, tuple[int, int]]:
    """Per-pixel relevance of the rendered feature image.

    Returns the (H, W) score map and the argmax pixel as (row, col);
    ties resolve to the first pixel in row-major order.
    """
    feature = render(scene, camera, ("feature",)).feature
    flat = feature.reshape(-1, LANG_DIM)
    scores = cosine_scores(flat, query.vector).reshape(
        camera.height, camera.width)
    flat_idx = int(np.argmax(scores))
    return scores, (flat_idx // camera.width, flat_idx % camera.width)


def evaluate_localization(maps_and_boxes) -> float:
    """Fraction of views whose argmax pixel falls inside any ground-truth
    box.  Boxes are (x_min, y_min, x_max, y_max) in pixels, inclusive."""
    items = list(maps_and_boxes)
    if not items:
        raise ValidationError("localization evaluation needs at least one view")
    correct = 0
    for score_map, boxes in items:
        boxes = list(boxes)
        if not boxes:
            raise ValidationError("every view needs at least one ground-truth box")
        score_map = np.asarray(score_map)
        flat_idx = int(np.argmax(score_map))
        row, col = divmod(flat_idx, score_map.shape[1])
        if any(x0 <= col <= x1 and y0 <= row <= y1
               for x0, y0, x1, y1 in boxes):
            correct += 1
    return correct / len(items)
