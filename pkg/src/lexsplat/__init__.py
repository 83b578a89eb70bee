"""Language-embedded 3D Gaussian splatting.

Differentiable splatting of color and per-Gaussian language embeddings,
open-vocabulary retrieval directly in 3D, and guided scene editing with
pluggable gradient providers.
"""

from .scene import (Camera, GaussianScene, ObjectBox, empty_scene, look_at,
                    load_scene, save_scene, object_box, LANG_DIM)
from .projection import project, ProjectedGaussians
from .rasterizer import render, RenderOutput
from .reference import render_reference
from .backward import render_backward, OutputGradients, SceneGradients
from .features import (FeatureMap, MaskSet, PcaBasis, fit_pca,
                       project_features, refine_with_masks)
from .language import EmbeddingTrainConfig, train_language_embeddings
from .retrieval import (QueryEmbedding, RetrievalResult, relevance_scores,
                        retrieve, render_relevance_map, evaluate_localization)
from .guidance import (GuidanceRequest, GuidanceResponse, GuidanceProvider,
                       NullProvider, PhotometricMockProvider,
                       FileGuidanceProvider, add_noise)
from .views import ViewRing, select_views
from .editing import (EditConfig, weight_schedule, score_gate, csd_step,
                      densify_and_prune, edit, delete_object)

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianScene", "ObjectBox", "empty_scene", "look_at",
    "load_scene", "save_scene", "object_box", "LANG_DIM",
    "project", "ProjectedGaussians", "render", "RenderOutput",
    "render_reference", "render_backward", "OutputGradients",
    "SceneGradients", "FeatureMap", "MaskSet", "PcaBasis", "fit_pca",
    "project_features", "refine_with_masks", "EmbeddingTrainConfig",
    "train_language_embeddings", "QueryEmbedding", "RetrievalResult",
    "relevance_scores", "retrieve", "render_relevance_map",
    "evaluate_localization", "GuidanceRequest", "GuidanceResponse",
    "GuidanceProvider", "NullProvider", "PhotometricMockProvider",
    "FileGuidanceProvider", "add_noise", "ViewRing", "select_views",
    "EditConfig", "weight_schedule", "score_gate", "csd_step",
    "densify_and_prune", "edit", "delete_object",
    "__version__",
]
