"""Batch export jobs: images in, engine containers out.

Every readable image yields one container named by its stem; unreadable
images are skipped with a warning and surface in the summary.  Each run
writes a ``manifest.txt`` pairing container files with camera ids (the
sidecar the engine's CLI consumes) and an ``export_manifest.json``
recording backend identifiers and per-image status for reproducibility.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__
from .containers import read_pca_basis, write_feature_map, write_masks, \
    write_query
from .extract import (SyntheticMaskGenerator, make_feature_extractor,
                      make_text_encoder, parse_backend)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class ExportJob:
    image_dir: str
    out_dir: str
    backend: str = "synthetic:512"
    device: str = "cpu"
    batch_size: int = 4


@dataclass
class ExportSummary:
    written: list = field(default_factory=list)
    skipped: list = field(default_factory=list)   # (filename, reason)

    @property
    def ok(self) -> bool:
        return not self.skipped


def _iter_images(directory):
    names = sorted(
        n for n in os.listdir(directory)
        if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS)
    if not names:
        raise FileNotFoundError(f"no images found under {directory}")
    return names


def _load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _write_manifests(job: ExportJob, kind: str, summary: ExportSummary,
                     extra: dict) -> None:
    pairs = [(name, os.path.splitext(name)[0]) for name in summary.written]
    with open(os.path.join(job.out_dir, "manifest.txt"), "w") as fh:
        for filename, camera_id in pairs:
            fh.write(f"{filename} {camera_id}\n")
    record = {
        "tool": "splat-feature-export",
        "version": __version__,
        "kind": kind,
        "backend": job.backend,
        "written": summary.written,
        "skipped": [{"file": f, "reason": r} for f, r in summary.skipped],
    }
    record.update(extra)
    with open(os.path.join(job.out_dir, "export_manifest.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_features(job: ExportJob) -> ExportSummary:
    """One TGRF per readable image, at the backend's native dimension."""
    extractor = make_feature_extractor(job.backend, device=job.device)
    os.makedirs(job.out_dir, exist_ok=True)
    summary = ExportSummary()
    for name in _iter_images(job.image_dir):
        stem = os.path.splitext(name)[0]
        try:
            image = _load_image(os.path.join(job.image_dir, name))
        except (UnidentifiedImageError, OSError) as exc:
            print(f"warning: skipping {name}: {exc}", file=sys.stderr)
            summary.skipped.append((name, str(exc)))
            continue
        feats = extractor.extract(image)
        out_name = stem + ".tgrf"
        write_feature_map(os.path.join(job.out_dir, out_name), feats)
        summary.written.append(out_name)
    _write_manifests(job, "features", summary, {"dim": extractor.dim})
    return summary


def export_masks(job: ExportJob) -> ExportSummary:
    """One TGRM of fine region proposals per readable image."""
    generator = SyntheticMaskGenerator()
    os.makedirs(job.out_dir, exist_ok=True)
    summary = ExportSummary()
    for name in _iter_images(job.image_dir):
        stem = os.path.splitext(name)[0]
        try:
            image = _load_image(os.path.join(job.image_dir, name))
        except (UnidentifiedImageError, OSError) as exc:
            print(f"warning: skipping {name}: {exc}", file=sys.stderr)
            summary.skipped.append((name, str(exc)))
            continue
        masks = generator.generate(image)
        out_name = stem + ".tgrm"
        write_masks(os.path.join(job.out_dir, out_name), masks)
        summary.written.append(out_name)
    _write_manifests(job, "masks", summary, {})
    return summary


def export_query(text: str, basis_path: str, out_path: str,
                 backend: str = "synthetic:512",
                 device: str = "cpu") -> np.ndarray:
    """Embed a text query, project it through the scene's PCA basis, and
    write the unit-normalized result as TGRQ.  Returns the stored vector.
    """
    encoder = make_text_encoder(backend, device=device)
    kind, _ = parse_backend(backend)
    raw = encoder.encode(text) if kind == "synthetic" \
        else encoder.encode_text(text)
    mean, components, _ = read_pca_basis(basis_path)
    if raw.shape[0] != mean.shape[0]:
        raise ValueError(
            f"encoder dim {raw.shape[0]} does not match basis dim "
            f"{mean.shape[0]}")
    projected = components @ (raw - mean)
    norm = np.linalg.norm(projected)
    if norm > 0:
        projected = projected / norm
    vector = projected.astype(np.float32)
    write_query(out_path, vector, text)
    return vector
