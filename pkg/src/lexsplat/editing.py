"""Guided editing of retrieved Gaussians via dual-provider score
distillation.

Each step renders four views of the evolving scene, asks an
image-editing provider and a multi-view provider for residuals, blends
them with scheduled weights (multi-view emphasis early, image-editing
emphasis late), backpropagates the blended residual through the
renderer, and applies relevance-gated adaptive-moment updates.  Only
Gaussians with a positive score gate ever move; every parameter of a
gate-zero Gaussian stays bit-identical.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields

import numpy as np

from .backward import OutputGradients, render_backward
from .errors import ValidationError
from .imgio import write_step_previews
from .guidance import DEFAULT_IMAGE_EDIT_CONFIG, make_request
from .optim import Adam
from .projection import world_covariances
from .rasterizer import render
from .retrieval import QueryEmbedding, retrieve
from .scene import GaussianScene, save_scene
from .views import ViewRing, select_views

_PARAM_CLASSES = ("positions", "scales", "rotations", "colors",
                  "opacity_logits")


@dataclass
class EditConfig:
    """Editing-run configuration; see ``from_file`` for the text format."""

    prompt: str = ""
    retrieval_tau: float = 0.6     # Eq-style strict threshold for member set
    tau_low: float = 0.4           # gate = 0 at or below this score
    tau_high: float = 0.7          # gate = 1 at or above this score
    lambda_ip0: float = 1.0        # initial image-editing weight
    lambda_mv0: float = 0.5        # initial multi-view weight (2:1 ratio)
    mv_zero_fraction: float = 0.75  # epoch fraction where lambda_mv hits 0
    steps: int = 1200
    t_min: float = 0.02
    t_max: float = 0.2
    densify_interval: int = 100
    densify_fraction: float = 0.01
    prune_opacity: float = 0.005
    checkpoint_interval: int = 500
    lr_positions: float = 1.6e-5
    lr_scales: float = 5e-4
    lr_rotations: float = 1e-4
    lr_colors: float = 2.5e-4
    lr_opacity: float = 5e-3

    def validate(self) -> None:
        if not 0.0 <= self.tau_low < self.tau_high <= 1.0:
            raise ValidationError(
                f"need 0 <= tau_low < tau_high <= 1, got "
                f"({self.tau_low}, {self.tau_high})")
        if not 0.0 < self.mv_zero_fraction <= 1.0:
            raise ValidationError("mv_zero_fraction must lie in (0, 1]")
        if not 0.0 < self.densify_fraction <= 1.0:
            raise ValidationError("densify_fraction must lie in (0, 1]")
        if self.steps < 1:
            raise ValidationError("steps must be positive")
        if not 0.02 <= self.t_min <= self.t_max <= 0.2:
            raise ValidationError(
                "noise range must satisfy 0.02 <= t_min <= t_max <= 0.2")

    @classmethod
    def from_file(cls, path) -> "EditConfig":
        """Parse a ``key = value`` text file; '#' starts a comment."""
        values = {}
        types = {f.name: f.type for f in fields(cls)}
        with open(path) as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(
                        f"{path}:{line_no}: expected 'key = value'")
                key, val = (part.strip() for part in line.split("=", 1))
                if key not in types:
                    raise ValidationError(
                        f"{path}:{line_no}: unknown config key {key!r}")
                if types[key] == "int":
                    values[key] = int(val)
                elif types[key] == "float":
                    values[key] = float(val)
                else:
                    values[key] = val
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def weight_schedule(epoch_fraction: float, config: EditConfig
                    ) -> tuple[float, float]:
    """Provider weights at a run fraction in [0, 1].

    The multi-view weight decays linearly to zero at ``mv_zero_fraction``;
    the image weight absorbs the difference so the total stays constant.
    """
    if not 0.0 <= epoch_fraction <= 1.0:
        raise ValidationError(
            f"epoch fraction {epoch_fraction} outside [0, 1]")
    lam2 = config.lambda_mv0 * max(
        0.0, 1.0 - epoch_fraction / config.mv_zero_fraction)
    lam1 = config.lambda_ip0 + (config.lambda_mv0 - lam2)
    return lam1, lam2


def score_gate(scores, config: EditConfig) -> np.ndarray:
    """Per-Gaussian update-rate multiplier in [0, 1]: a linear ramp from
    tau_low to tau_high, clamped."""
    s = np.asarray(scores, dtype=np.float64)
    return np.clip((s - config.tau_low) / (config.tau_high - config.tau_low),
                   0.0, 1.0)


@dataclass
class StepStats:
    """Bookkeeping from one optimization step."""

    grad_magnitudes: np.ndarray    # pre-gate position-gradient norms
    residual_norm_ip: float
    residual_norm_mv: float


def csd_step(scene: GaussianScene, ring: ViewRing, providers, gate,
             lam1: float, lam2: float, t: float, seed: int, *,
             conditioning, optimizer: Adam, config: EditConfig) -> StepStats:
    """One editing step: render the ring, query both providers, blend
    residuals as lam1 * r_ip + lam2 * r_mv, backpropagate, and apply
    gated adaptive-moment updates in place.

    Providers with an exactly-zero weight are skipped.  A provider
    failure propagates before any parameter moves, so the step is atomic.
    """
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != (scene.count,):
        raise ValidationError(
            f"gate has shape {gate.shape}, expected ({scene.count},)")
    image_provider, mv_provider = providers
    cams = list(ring.cameras)
    rendered = [render(scene, cam, ("color",)).color for cam in cams]

    def ask(provider, extra_config):
        request = make_request(
            rendered, conditioning, cams, t, seed, config.prompt,
            provider_config=extra_config)
        response = provider.guide(request)
        response.validate_against(request)
        return response.residuals

    res_ip = ask(image_provider, DEFAULT_IMAGE_EDIT_CONFIG) if lam1 != 0.0 \
        else [np.zeros_like(v) for v in rendered]
    res_mv = ask(mv_provider, {}) if lam2 != 0.0 \
        else [np.zeros_like(v) for v in rendered]

    combined = [lam1 * rip + lam2 * rmv for rip, rmv in zip(res_ip, res_mv)]

    total = None
    for cam, residual in zip(cams, combined):
        grads = render_backward(
            scene, cam, ("color",),
            OutputGradients(color=residual / len(cams)))
        if total is None:
            total = grads
        else:
            for name in _PARAM_CLASSES:
                acc = getattr(total, name)
                acc += getattr(grads, name)

    magnitudes = np.linalg.norm(total.positions, axis=1)

    lrs = {"positions": config.lr_positions, "scales": config.lr_scales,
           "rotations": config.lr_rotations, "colors": config.lr_colors,
           "opacity_logits": config.lr_opacity}
    active = gate > 0.0
    updates = {}
    for name in _PARAM_CLASSES:
        direction = optimizer.direction(name, getattr(total, name))
        scale = gate if direction.ndim == 1 else gate[:, None]
        updates[name] = lrs[name] * scale * direction
        param = getattr(scene, name)
        param[active] = param[active] - updates[name][active].astype(param.dtype)
    # restore invariants, touching only rows that actually moved so a
    # zero-residual step leaves every parameter bit-identical
    scene.colors[active] = np.clip(scene.colors[active], 0.0, 1.0)
    rotated = active & np.any(updates["rotations"] != 0.0, axis=1)
    norms = np.linalg.norm(scene.rotations[rotated], axis=1, keepdims=True)
    scene.rotations[rotated] = scene.rotations[rotated] / norms

    return StepStats(
        grad_magnitudes=magnitudes,
        residual_norm_ip=float(np.sqrt(sum(
            np.sum(np.square(r)) for r in res_ip))),
        residual_norm_mv=float(np.sqrt(sum(
            np.sum(np.square(r)) for r in res_mv))))


def densify_and_prune(scene: GaussianScene, grad_magnitudes, gate,
                      config: EditConfig, *,
                      rng: np.random.Generator,
                      optimizer: Adam | None = None
                      ) -> tuple[GaussianScene, np.ndarray]:
    """Split/clone the highest-gradient gate-positive Gaussians and prune
    transparent gate-positive ones.

    Exactly ceil(densify_fraction * |candidates|) parents densify: a
    parent whose largest axis exceeds the scene median is split into two
    samples of itself (scales shrunk), otherwise it is cloned.  Children
    copy the parent's language vector bit-exactly and inherit its gate.
    Gate-zero Gaussians are never densified nor pruned.  Returns the new
    scene and the matching gate vector.
    """
    gate = np.asarray(gate, dtype=np.float64)
    mags = np.asarray(grad_magnitudes, dtype=np.float64)
    if mags.shape != (scene.count,) or gate.shape != (scene.count,):
        raise ValidationError("gradient stats must cover the current scene")

    candidates = np.flatnonzero(gate > 0.0)
    n_densify = int(np.ceil(config.densify_fraction * len(candidates))) \
        if len(candidates) else 0
    chosen = candidates[np.argsort(-mags[candidates], kind="stable")][:n_densify]

    max_axis = np.exp(scene.scales.astype(np.float64)).max(axis=1)
    median_axis = np.median(max_axis) if scene.count else 0.0
    split_parents = chosen[max_axis[chosen] > median_axis]
    clone_parents = chosen[max_axis[chosen] <= median_axis]

    keep = np.ones(scene.count, dtype=bool)
    keep[split_parents] = False
    opac = scene.opacities
    prunable = (gate > 0.0) & (opac < config.prune_opacity)
    prunable[chosen] = False   # freshly densified parents survive this event
    keep &= ~prunable

    children = {name: [] for name in
                ("positions", "scales", "rotations", "colors",
                 "opacity_logits", "lang")}
    child_gates = []

    def add_child(parent, position, scales):
        children["positions"].append(position)
        children["scales"].append(scales)
        children["rotations"].append(scene.rotations[parent].copy())
        children["colors"].append(scene.colors[parent].copy())
        children["opacity_logits"].append(scene.opacity_logits[parent].copy())
        children["lang"].append(scene.lang[parent].copy())
        child_gates.append(gate[parent])

    cov = world_covariances(scene) if len(split_parents) else None
    for parent in split_parents:
        mean = scene.positions[parent].astype(np.float64)
        shrunk = (scene.scales[parent].astype(np.float64)
                  - np.log(1.6)).astype(scene.scales.dtype)
        for _ in range(2):
            sample = rng.multivariate_normal(mean, cov[parent])
            add_child(parent, sample.astype(scene.positions.dtype), shrunk)
    for parent in clone_parents:
        add_child(parent, scene.positions[parent].copy(),
                  scene.scales[parent].copy())

    kept_idx = np.flatnonzero(keep)
    merged = {}
    for name in children:
        base = getattr(scene, name)[kept_idx]
        if children[name]:
            extra = np.stack(children[name]).astype(base.dtype)
            merged[name] = np.concatenate([base, extra], axis=0)
        else:
            merged[name] = base
    new_gate = np.concatenate([gate[kept_idx], np.asarray(child_gates)]) \
        if child_gates else gate[kept_idx]

    if optimizer is not None:
        for name in _PARAM_CLASSES:
            optimizer.keep_rows(name, kept_idx)
            optimizer.add_rows(name, len(child_gates))

    return GaussianScene(**merged), new_gate


def edit(scene: GaussianScene, query: QueryEmbedding, config: EditConfig,
         providers, *, dataset_cameras, seed: int = 0,
         run_dir: str | None = None) -> GaussianScene:
    """Run the full editing loop and return the edited scene.

    Retrieval fixes the target object and the per-Gaussian gates once; a
    fresh four-view ring is drawn every step, conditioned on renders of
    the frozen pre-edit scene.  All randomness derives from ``seed``
    through one counter-based stream, so identical inputs reproduce the
    edited scene bit-for-bit.
    """
    config.validate()
    result = retrieve(scene, query, config.retrieval_tau)
    if len(result.member_indices) == 0:
        raise ValidationError(
            f"query {query.label!r} matched no Gaussians at "
            f"tau={config.retrieval_tau}")

    working = GaussianScene(
        scene.positions.astype(np.float64), scene.scales.astype(np.float64),
        scene.rotations.astype(np.float64), scene.colors.astype(np.float64),
        scene.opacity_logits.astype(np.float64), scene.lang.astype(np.float64))
    snapshot = working.copy()
    gate = score_gate(result.scores, config)
    box = result.box

    rng = np.random.Generator(np.random.Philox(seed))
    optimizer = Adam()
    grad_accum = np.zeros(working.count)
    grad_count = 0

    log_rows = []
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.cfg"), "w") as fh:
            fh.write(config.to_text())

    for step in range(config.steps):
        ring = select_views(box, dataset_cameras, rng=rng)
        conditioning = [render(snapshot, cam, ("color",)).color
                        for cam in ring.cameras]
        lam1, lam2 = weight_schedule(step / config.steps, config)
        t = float(rng.uniform(config.t_min, config.t_max))
        noise_seed = int(rng.integers(0, 2 ** 63))
        stats = csd_step(
            working, ring, providers, gate, lam1, lam2, t, noise_seed,
            conditioning=conditioning, optimizer=optimizer, config=config)
        grad_accum += stats.grad_magnitudes
        grad_count += 1
        log_rows.append((step, lam1, lam2, t, stats.residual_norm_ip,
                         stats.residual_norm_mv))

        if config.densify_interval and (step + 1) % config.densify_interval == 0 \
                and step + 1 < config.steps:
            working, gate = densify_and_prune(
                working, grad_accum / max(grad_count, 1), gate, config,
                rng=rng, optimizer=optimizer)
            grad_accum = np.zeros(working.count)
            grad_count = 0

        if run_dir is not None and config.checkpoint_interval \
                and (step + 1) % config.checkpoint_interval == 0:
            _write_checkpoint(working, ring, run_dir, step + 1)

    if run_dir is not None:
        with open(os.path.join(run_dir, "schedule.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lambda1", "lambda2", "t",
                             "residual_ip", "residual_mv"])
            for row in log_rows:
                writer.writerow([repr(v) for v in row])

    dtype = scene.positions.dtype
    return GaussianScene(
        working.positions.astype(dtype), working.scales.astype(dtype),
        working.rotations.astype(dtype), working.colors.astype(dtype),
        working.opacity_logits.astype(dtype), working.lang.astype(dtype))


def _write_checkpoint(scene, ring, run_dir, step):
    ckpt = GaussianScene(
        scene.positions.astype(np.float32), scene.scales.astype(np.float32),
        scene.rotations.astype(np.float32), scene.colors.astype(np.float32),
        scene.opacity_logits.astype(np.float32), scene.lang.astype(np.float32))
    save_scene(ckpt, os.path.join(run_dir, f"scene_{step:06d}.ply"))
    write_step_previews(scene, ring, run_dir, step)


def delete_object(scene: GaussianScene, query: QueryEmbedding, tau: float,
                  cameras) -> tuple[GaussianScene, list]:
    """Remove the retrieved object and report per-view hole masks.

    A hole pixel is one the object used to cover (alpha >= 0.5) that the
    remaining scene no longer does (alpha < 0.5); masks feed an external
    inpainting stage.
    """
    result = retrieve(scene, query, tau)
    if len(result.member_indices) == 0:
        raise ValidationError(
            f"query {query.label!r} matched no Gaussians at tau={tau}")
    reduced = scene.without(result.member_indices)
    masks = []
    for cam in cameras:
        before = render(scene, cam, ()).alpha
        after = render(reduced, cam, ()).alpha
        masks.append((before >= 0.5) & (after < 0.5))
    return reduced, masks
