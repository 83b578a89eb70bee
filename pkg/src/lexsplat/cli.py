"""Command-line surface: thin composition of library operations.

Exit codes: 0 success, 2 validation/parse error, 3 external-service
error, 4 internal invariant violation.  Every run appends one JSON line
to the manifest file (``--manifest``), recording the resolved
configuration, input hashes, outputs, and timing.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .containers import (read_feature_map, read_masks, read_query,
                         write_feature_map, write_masks, write_pca_basis)
from .dataset import (camera_by_id, load_cameras, read_manifest,
                      write_manifest)
from .editing import EditConfig, delete_object, edit
from .errors import (GuidanceError, InternalError, LexsplatError, ParseError,
                     ProtocolError, TransportError, ValidationError)
from .features import (FeatureMap, MaskSet, fit_pca, project_features,
                       refine_with_masks)
from .guidance import FileGuidanceProvider, NullProvider
from .imgio import write_heatmap_png, write_png
from .language import EmbeddingTrainConfig, train_language_embeddings
from .retrieval import QueryEmbedding, render_relevance_map, retrieve
from .scene import load_scene, save_scene

PCA_SAMPLE_CAP = 1 << 18


class _Manifest:
    def __init__(self, command: str, args: argparse.Namespace):
        self.record = {
            "command": command,
            "argv": sys.argv[1:],
            "config": {k: v for k, v in vars(args).items()
                       if k not in ("func", "manifest")},
            "input_hashes": {},
            "outputs": [],
            "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "version": __version__,
        }
        self._t0 = time.monotonic()
        self.path = args.manifest

    def add_input(self, path) -> None:
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
        self.record["input_hashes"][str(path)] = digest.hexdigest()

    def add_output(self, path) -> None:
        self.record["outputs"].append(str(path))

    def write(self) -> None:
        self.record["duration_s"] = round(time.monotonic() - self._t0, 6)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(self.record, sort_keys=True) + "\n")


def _load_query(path) -> QueryEmbedding:
    vec, label = read_query(path)
    return QueryEmbedding(vector=vec, label=label)


def _load_supervised_views(features_dir, cameras_path):
    cameras = load_cameras(cameras_path)
    views = []
    for filename, camera_id in read_manifest(features_dir):
        data = read_feature_map(os.path.join(features_dir, filename))
        views.append((camera_by_id(cameras, camera_id),
                      FeatureMap(data, source_camera_id=camera_id)))
    if not views:
        raise ValidationError(f"no feature maps listed in {features_dir}")
    return views


def cmd_preprocess_features(args, manifest: _Manifest) -> int:
    pairs = read_manifest(args.features)
    if not pairs:
        raise ValidationError(f"empty manifest in {args.features}")
    maps = []
    mask_sets = []
    for filename, camera_id in pairs:
        fpath = os.path.join(args.features, filename)
        manifest.add_input(fpath)
        maps.append((filename, camera_id, read_feature_map(fpath)))
        stem = os.path.splitext(filename)[0]
        mpath = os.path.join(args.masks, stem + ".tgrm")
        if not os.path.exists(mpath):
            raise ValidationError(
                f"missing mask file for image {stem!r}: {mpath}")
        manifest.add_input(mpath)
        mask_sets.append(read_masks(mpath))

    rng = np.random.Generator(np.random.Philox(args.seed))
    flat = np.concatenate([m.reshape(-1, m.shape[2]) for _, _, m in maps])
    if len(flat) > PCA_SAMPLE_CAP:
        pick = rng.choice(len(flat), PCA_SAMPLE_CAP, replace=False)
        flat = flat[np.sort(pick)]
    basis = fit_pca(flat, k=args.pca_dim)

    os.makedirs(args.out, exist_ok=True)
    basis_path = os.path.join(args.out, "basis.tgrp")
    write_pca_basis(basis_path, basis.mean, basis.components,
                    basis.explained_variance)
    manifest.add_output(basis_path)
    out_pairs = []
    for (filename, camera_id, data), masks in zip(maps, mask_sets):
        fmap = FeatureMap(data, source_camera_id=camera_id)
        projected = project_features(fmap, basis)
        refined = refine_with_masks(projected, MaskSet(masks))
        out_path = os.path.join(args.out, filename)
        write_feature_map(out_path, refined.data)
        manifest.add_output(out_path)
        out_pairs.append((filename, camera_id))
    write_manifest(args.out, out_pairs)
    print(f"wrote {len(out_pairs)} refined maps + basis to {args.out}")
    return 0


def cmd_train_language(args, manifest: _Manifest) -> int:
    manifest.add_input(args.scene)
    scene = load_scene(args.scene)
    views = _load_supervised_views(args.features, args.cameras)
    cfg = EmbeddingTrainConfig(epochs=args.epochs,
                               learning_rate=args.learning_rate)
    history: list[float] = []
    trained = train_language_embeddings(scene, views, cfg, history=history)
    save_scene(trained, args.out)
    manifest.add_output(args.out)
    print(f"trained embeddings over {len(views)} views, "
          f"final loss {history[-1]:.6f}")
    return 0


def cmd_query(args, manifest: _Manifest) -> int:
    manifest.add_input(args.scene)
    manifest.add_input(args.query)
    scene = load_scene(args.scene)
    query = _load_query(args.query)
    result = retrieve(scene, query, args.tau)
    print(f"query {query.label!r}: {len(result.member_indices)} members "
          f"at tau={args.tau}")
    if result.box is not None:
        c, h = result.box.center, result.box.half_extents
        print(f"box center ({c[0]:.4f}, {c[1]:.4f}, {c[2]:.4f}) "
              f"half_extents ({h[0]:.4f}, {h[1]:.4f}, {h[2]:.4f})")
    if args.heatmap:
        if not args.cameras:
            raise ValidationError("--heatmap requires --cameras")
        cam = camera_by_id(load_cameras(args.cameras), args.heatmap)
        scores, argmax = render_relevance_map(scene, cam, query)
        prefix = args.out_prefix or f"heatmap_{args.heatmap}"
        write_heatmap_png(prefix + ".png", scores)
        write_feature_map(prefix + ".tgrf", scores[:, :, None])
        manifest.add_output(prefix + ".png")
        manifest.add_output(prefix + ".tgrf")
        print(f"argmax pixel (row, col) = ({argmax[0]}, {argmax[1]})")
    return 0


def _make_provider(spec: str):
    if spec == "mock":
        return NullProvider()
    if spec.startswith("files:"):
        return FileGuidanceProvider(spec.split(":", 1)[1])
    if spec.startswith("remote:"):
        from .wire import RemoteGuidanceProvider
        return RemoteGuidanceProvider.connect(spec.split(":", 1)[1])
    raise ValidationError(
        f"unknown provider spec {spec!r}; use mock, files:DIR, or "
        f"remote:HOST:PORT")


def cmd_edit(args, manifest: _Manifest) -> int:
    for path in (args.scene, args.query, args.config):
        manifest.add_input(path)
    scene = load_scene(args.scene)
    query = _load_query(args.query)
    config = EditConfig.from_file(args.config)
    cameras = load_cameras(args.cameras)
    image_provider = _make_provider(args.provider)
    mv_provider = _make_provider(args.mv_provider) if args.mv_provider \
        else NullProvider()
    edited = edit(scene, query, config, (image_provider, mv_provider),
                  dataset_cameras=cameras, seed=args.seed, run_dir=args.out)
    out_scene = os.path.join(args.out, "edited.ply")
    save_scene(edited, out_scene)
    manifest.add_output(out_scene)
    print(f"edited scene written to {out_scene}")
    return 0


def cmd_delete(args, manifest: _Manifest) -> int:
    manifest.add_input(args.scene)
    manifest.add_input(args.query)
    scene = load_scene(args.scene)
    query = _load_query(args.query)
    cameras = load_cameras(args.cameras)
    reduced, masks = delete_object(scene, query, args.tau, cameras)
    os.makedirs(args.out, exist_ok=True)
    out_scene = os.path.join(args.out, "reduced.ply")
    save_scene(reduced, out_scene)
    manifest.add_output(out_scene)
    for cam, mask in zip(cameras, masks):
        out_mask = os.path.join(args.out, f"holes_{cam.camera_id}.tgrm")
        write_masks(out_mask, [mask])
        manifest.add_output(out_mask)
    removed = scene.count - reduced.count
    print(f"removed {removed} Gaussians; hole masks for "
          f"{len(cameras)} views in {args.out}")
    return 0


def cmd_eval_loc(args, manifest: _Manifest) -> int:
    map_files = sorted(f for f in os.listdir(args.maps) if f.endswith(".tgrf"))
    if not map_files:
        raise ValidationError(f"no .tgrf score maps under {args.maps}")
    pairs = []
    rows = []
    for filename in map_files:
        stem = os.path.splitext(filename)[0]
        gt_path = os.path.join(args.gt, stem + ".txt")
        if not os.path.exists(gt_path):
            raise ValidationError(f"missing ground-truth boxes: {gt_path}")
        score_map = read_feature_map(os.path.join(args.maps, filename))[:, :, 0]
        boxes = []
        labels = []
        with open(gt_path) as fh:
            for raw in fh:
                line = raw.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise ParseError(
                        f"{gt_path}: expected 'label x0 y0 x1 y1'")
                labels.append(parts[0])
                boxes.append(tuple(float(v) for v in parts[1:]))
        pairs.append((score_map, boxes))
        flat_idx = int(np.argmax(score_map))
        row, col = divmod(flat_idx, score_map.shape[1])
        hit = any(x0 <= col <= x1 and y0 <= row <= y1
                  for x0, y0, x1, y1 in boxes)
        rows.append((stem, labels[0] if labels else "", hit))
    from .retrieval import evaluate_localization
    accuracy = evaluate_localization(pairs)
    print(f"{'view':<24} {'query':<16} correct")
    for stem, label, hit in rows:
        print(f"{stem:<24} {label:<16} {'yes' if hit else 'no'}")
    print(f"accuracy {accuracy:.3f}")
    return 0


def cmd_render(args, manifest: _Manifest) -> int:
    manifest.add_input(args.scene)
    scene = load_scene(args.scene)
    cam = camera_by_id(load_cameras(args.cameras), args.camera)
    channels = ("color", "feature") if args.features else ("color",)
    from .rasterizer import render
    out = render(scene, cam, channels)
    write_png(args.out + ".png", out.color)
    manifest.add_output(args.out + ".png")
    if args.features:
        write_feature_map(args.out + "_feature.tgrf", out.feature)
        manifest.add_output(args.out + "_feature.tgrf")
    print(f"rendered {cam.camera_id} to {args.out}.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexsplat",
        description="Language-embedded Gaussian splatting toolkit")
    parser.add_argument("--manifest", default="lexsplat_manifest.jsonl",
                        help="append-only run manifest (JSON lines)")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed for all randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess-features",
                       help="PCA-reduce and mask-refine raw feature maps")
    p.add_argument("--features", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pca-dim", type=int, default=64, dest="pca_dim")
    p.set_defaults(func=cmd_preprocess_features)

    p = sub.add_parser("train-language",
                       help="optimize per-Gaussian language embeddings")
    p.add_argument("--scene", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=2.5e-3,
                   dest="learning_rate")
    p.set_defaults(func=cmd_train_language)

    p = sub.add_parser("query", help="retrieve Gaussians for a text query")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--tau", type=float, default=0.6)
    p.add_argument("--heatmap", default="",
                   help="camera id to render a relevance heatmap for")
    p.add_argument("--cameras", default="")
    p.add_argument("--out-prefix", default="", dest="out_prefix")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("edit", help="guided editing of retrieved Gaussians")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--provider", required=True,
                   help="mock | files:DIR | remote:HOST:PORT")
    p.add_argument("--mv-provider", default="", dest="mv_provider",
                   help="optional multi-view provider spec")
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("delete",
                       help="remove retrieved Gaussians and export hole masks")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--tau", type=float, default=0.6)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_delete)

    p = sub.add_parser("eval-loc",
                       help="localization accuracy of score maps vs boxes")
    p.add_argument("--maps", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_loc)

    p = sub.add_parser("render", help="render a view to PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--features", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = _Manifest(args.command, args)
    try:
        code = args.func(args, manifest)
    except (ValidationError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except (TransportError, ProtocolError, GuidanceError) as exc:
        print(f"external service error: {exc}", file=sys.stderr)
        code = 3
    except (InternalError, LexsplatError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        code = 4
    manifest.record["exit_code"] = code
    manifest.write()
    return code


if __name__ == "__main__":
    sys.exit(main())
