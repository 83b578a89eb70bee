"""Feature, mask, and text-embedding backends.

The ``synthetic`` backend is fully deterministic and dependency-free: it
exists so pipelines, containers, and golden fixtures can be exercised
hermetically.  Per-pixel descriptors (color, luminance gradients,
positional encodings) are pushed through a fixed random projection whose
seed derives from the backend spec string, so identical inputs yield
byte-identical outputs on any machine.

The ``clip`` backend extracts dense patch embeddings from a pretrained
vision tower (value-projection features, bilinearly upsampled to pixel
resolution) and encodes queries with the matching text tower.  It needs
torch + transformers and cached weights; constructing it without them
raises ExtractorUnavailable.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ExtractorUnavailable(RuntimeError):
    """The requested backend cannot run in this environment."""


def _seed_from(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")


def parse_backend(spec: str):
    """'synthetic:<dim>' or 'clip:<model-id>' -> (kind, detail)."""
    kind, _, detail = spec.partition(":")
    if kind == "synthetic":
        return kind, int(detail or "512")
    if kind == "clip":
        return kind, detail or "openai/clip-vit-base-patch16"
    raise ValueError(f"unknown backend spec {spec!r}")


class SyntheticFeatureExtractor:
    """Dense per-pixel features from hand-crafted image statistics."""

    DESCRIPTOR_DIM = 12

    def __init__(self, dim: int = 512, spec: str = ""):
        self.dim = dim
        rng = np.random.Generator(np.random.Philox(
            _seed_from(spec or f"synthetic:{dim}")))
        self._projection = rng.standard_normal(
            (self.DESCRIPTOR_DIM, dim)) / np.sqrt(self.DESCRIPTOR_DIM)

    def _descriptors(self, image: np.ndarray) -> np.ndarray:
        h, w, _ = image.shape
        lum = image.mean(axis=2)
        gy, gx = np.gradient(lum)
        ys, xs = np.mgrid[0:h, 0:w]
        ys = ys / max(h - 1, 1)
        xs = xs / max(w - 1, 1)
        parts = [image[:, :, 0], image[:, :, 1], image[:, :, 2], lum,
                 gx, gy, xs, ys,
                 np.sin(np.pi * xs), np.cos(np.pi * xs),
                 np.sin(np.pi * ys), np.cos(np.pi * ys)]
        return np.stack(parts, axis=2)

    def extract(self, image: np.ndarray) -> np.ndarray:
        """(H, W, 3) float image in [0, 1] -> (H, W, dim) float32."""
        desc = self._descriptors(np.asarray(image, dtype=np.float64))
        feats = desc.reshape(-1, self.DESCRIPTOR_DIM) @ self._projection
        return feats.reshape(
            image.shape[0], image.shape[1], self.dim).astype(np.float32)


class SyntheticMaskGenerator:
    """Fine region proposals from luminance quantile bands.

    Regions smaller than ``min_area`` pixels or covering almost the whole
    frame are dropped (whole-image bands are not object proposals), so a
    uniform image yields an empty proposal set.
    """

    def __init__(self, bands: int = 4, min_area: int = 4,
                 max_coverage: float = 0.95):
        self.bands = bands
        self.min_area = min_area
        self.max_coverage = max_coverage

    def generate(self, image: np.ndarray) -> list:
        img = np.asarray(image, dtype=np.float64)
        lum = img.mean(axis=2)
        h, w = lum.shape
        edges = np.quantile(lum, np.linspace(0, 1, self.bands + 1))
        masks = []
        for i in range(self.bands):
            lo, hi = edges[i], edges[i + 1]
            if hi - lo < 1e-12:
                continue
            mask = (lum >= lo) & (lum <= hi if i == self.bands - 1
                                  else lum < hi)
            area = int(mask.sum())
            if area < self.min_area or area > self.max_coverage * h * w:
                continue
            masks.append(mask)
        return masks


class SyntheticTextEncoder:
    """Deterministic stand-in text encoder: a fixed unit vector per text."""

    def __init__(self, dim: int = 512):
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("query text must be non-empty")
        rng = np.random.Generator(np.random.Philox(
            _seed_from(f"text:{self.dim}:{text}")))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)


class ClipDenseExtractor:
    """Dense pixel-level features from a pretrained CLIP vision tower.

    Patch embeddings are taken from the final attention block's value
    projection (skipping the attention mixing, which keeps per-patch
    locality), mapped through the visual projection, and bilinearly
    upsampled to pixel resolution.  A learned upsampler can be slotted in
    by replacing ``upsample``.
    """

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ExtractorUnavailable(
                f"clip backend needs torch + transformers: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except OSError as exc:
            raise ExtractorUnavailable(
                f"cannot load {model_id!r} (weights not cached and no "
                f"network): {exc}") from exc
        self._torch = torch
        self._device = device
        self._model.eval().to(device)
        self.dim = self._model.config.projection_dim

    def extract(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        h, w = image.shape[:2]
        pixel = self._processor(
            images=(np.asarray(image) * 255).astype(np.uint8),
            return_tensors="pt")["pixel_values"].to(self._device)
        vision = self._model.vision_model
        with torch.no_grad():
            hidden = vision.embeddings(pixel)
            hidden = vision.pre_layrnorm(hidden)
            for layer in vision.encoder.layers[:-1]:
                hidden = layer(hidden, None, None)[0]
            last = vision.encoder.layers[-1]
            normed = last.layer_norm1(hidden)
            values = last.self_attn.v_proj(normed)
            values = last.self_attn.out_proj(values)
            hidden = hidden + values
            hidden = hidden + last.mlp(last.layer_norm2(hidden))
            patches = vision.post_layernorm(hidden[:, 1:])
            feats = self._model.visual_projection(patches)
        side = int(np.sqrt(feats.shape[1]))
        grid = feats.reshape(1, side, side, -1).permute(0, 3, 1, 2)
        up = torch.nn.functional.interpolate(
            grid, size=(h, w), mode="bilinear", align_corners=False)
        return up[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("query text must be non-empty")
        torch = self._torch
        tokens = self._processor(text=[text], return_tensors="pt",
                                 padding=True).to(self._device)
        with torch.no_grad():
            emb = self._model.get_text_features(**tokens)[0].cpu().numpy()
        return emb / np.linalg.norm(emb)


def make_feature_extractor(spec: str, device: str = "cpu"):
    kind, detail = parse_backend(spec)
    if kind == "synthetic":
        return SyntheticFeatureExtractor(detail, spec=spec)
    return ClipDenseExtractor(detail, device=device)


def make_text_encoder(spec: str, device: str = "cpu"):
    kind, detail = parse_backend(spec)
    if kind == "synthetic":
        return SyntheticTextEncoder(detail)
    return ClipDenseExtractor(detail, device=device)
