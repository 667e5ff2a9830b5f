"""Seeded synthetic case generator.

Produces complete bundles at desk scale so the whole pipeline runs
without any foundation model: a textured image with a planted elliptical
lesion (class-conditional interior texture), its ground-truth mask, a
noisy activation heatmap, per-candidate segmenter outputs whose quality
degrades with box error, quality-correlated embeddings against one fixed
text vector, and a derived multi-channel feature map. At noise level 0
the heatmap equals the mask and candidate logits are exact, so the
pipeline reproduces ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import CaseBundle, normalize_minmax, resize_bilinear, save_bundle
from .prompts import (CandidateBox, PromptConfig, fallback_box,
                      generate_candidates, iou_box)

MASK_LOGIT_SCALE = 3.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_cases: int = 200
    image_size: int = 64
    noise: float = 0.3
    embedding_dim: int = 16
    feature_channels: int = 8
    feature_size: int = 32
    seed: int = 42
    prompt: PromptConfig = PromptConfig()

    def __post_init__(self):
        if self.n_cases < 2 or self.image_size < 16:
            raise ValueError("need at least 2 cases and 16px images")
        if not (0.0 <= self.noise <= 1.0):
            raise ValueError("noise must lie in [0,1]")


def _smooth_field(rng, size, cells=8, amplitude=1.0):
    coarse = rng.normal(size=(cells, cells))
    return amplitude * resize_bilinear(coarse, size, size)


def _box_blur(x, radius):
    if radius < 1:
        return x.copy()
    k = 2 * radius + 1
    padded = np.pad(x, radius, mode="edge")
    c = np.cumsum(np.cumsum(np.pad(padded, ((1, 0), (1, 0))), axis=0), axis=1)
    h, w = x.shape
    out = (c[k:k + h, k:k + w] - c[:h, k:k + w] - c[k:k + h, :w] + c[:h, :w])
    return out / (k * k)


def _ellipse_mask(size, rng):
    cy, cx = rng.uniform(0.34, 0.66, size=2) * size
    a = rng.uniform(0.13, 0.21) * size
    b = rng.uniform(0.10, 0.16) * size
    phi = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.float64)


def _tight_box(mask):
    rows, cols = np.nonzero(mask > 0)
    return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())


def _make_image(rng, size, gt, label, noise):
    background = 0.55 + _smooth_field(rng, size, cells=6, amplitude=0.06)
    background += (0.01 + 0.02 * noise) * rng.normal(size=(size, size))
    lesion_base = background - 0.28 + _smooth_field(rng, size, cells=5, amplitude=0.02)
    # class-conditional interior heterogeneity, with overlapping ranges so
    # neither branch saturates
    if label == 1:
        sigma_tex = rng.uniform(0.055, 0.12)
    else:
        sigma_tex = rng.uniform(0.015, 0.065)
    lesion_tex = sigma_tex * rng.normal(size=(size, size))
    image = np.where(gt > 0, lesion_base + lesion_tex, background)
    return np.clip(image, 0.02, 0.98)


def _make_heatmap(rng, gt, noise):
    if noise == 0.0:
        return gt.copy()
    size = gt.shape[0]
    heat = _box_blur(gt, 2)
    heat = heat * (1.0 - 0.2 * noise)
    heat += 0.25 * noise * np.abs(_smooth_field(rng, size, cells=7, amplitude=1.0))
    if rng.random() < 0.4:
        # dim distractor blob away from the lesion
        distractor = _ellipse_mask(size, rng)
        heat += 0.45 * _box_blur(distractor * (gt == 0.0), 2)
    return normalize_minmax(heat)


def _candidate_outputs(rng, gt, box, gt_box, label, noise, dim):
    size = gt.shape[0]
    quality = iou_box(box, gt_box)
    if noise == 0.0:
        mask_core = gt.copy()
    else:
        wobble = _box_blur(gt, 1) + 0.12 * noise * _smooth_field(rng, size, cells=6)
        mask_core = (wobble > rng.uniform(0.35, 0.6)).astype(np.float64)
        region = np.zeros_like(gt)
        margin = max(2, size // 16)
        r0 = max(0, box.r0 - margin)
        c0 = max(0, box.c0 - margin)
        region[r0:box.r1 + 1 + margin, c0:box.c1 + 1 + margin] = 1.0
        mask_core *= region
        if quality < 0.25:
            # a badly placed box segments its own region instead
            mask_core = region * (rng.random(gt.shape) < 0.55 + 0.3 * rng.random())
    sigma = noise * (0.35 + 0.9 * (1.0 - quality))
    logits = MASK_LOGIT_SCALE * (2.0 * mask_core - 1.0)
    logits = logits + MASK_LOGIT_SCALE * sigma * rng.normal(size=gt.shape)

    signed = 0.8 * quality * (2.0 * label - 1.0)
    cls = np.array([0.0, signed]) + 0.8 * noise * rng.normal(size=2)

    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    return logits, cls, direction, quality


def text_vector(dim: int) -> np.ndarray:
    """The fixed inference prompt embedding, shared by every case."""
    raw = np.sin(np.arange(1, dim + 1, dtype=np.float64))
    return raw / np.linalg.norm(raw)


def _make_feature_map(rng, image, gt, label, channels, fsize, noise):
    size = image.shape[0]
    local_mean = _box_blur(image, 1)
    local_sq = _box_blur(image ** 2, 1)
    local_std = np.sqrt(np.maximum(local_sq - local_mean ** 2, 0.0))
    grad_r = np.abs(np.diff(image, axis=0, prepend=image[:1]))
    grad_c = np.abs(np.diff(image, axis=1, prepend=image[:, :1]))
    planes = [
        image,
        local_std,
        grad_r + grad_c,
        _box_blur(image, 3),
    ]
    feats = [resize_bilinear(p, fsize, fsize)
             + 0.04 * noise * rng.normal(size=(fsize, fsize)) for p in planes]
    while len(feats) < channels:
        feats.append(0.1 * rng.normal(size=(fsize, fsize)))
    return np.stack(feats[:channels])


def generate_case(spec: SyntheticSpec, index: int) -> CaseBundle:
    """Deterministic bundle for one case index."""
    rng = np.random.default_rng((spec.seed, index))
    label = index % 2
    size = spec.image_size
    gt = _ellipse_mask(size, rng)
    image = _make_image(rng, size, gt, label, spec.noise)
    heatmap = _make_heatmap(rng, gt, spec.noise)

    boxes = generate_candidates(heatmap, spec.prompt)
    if not boxes:
        boxes = [fallback_box(heatmap)]
    gt_box_obj = CandidateBox(*_tight_box(gt), 1.0, 0.5)

    f_text = text_vector(spec.embedding_dim)
    tensors = {
        "image": image,
        "gt_mask": gt,
        "heatmap": heatmap,
        "text_embedding": f_text,
        "feature_map": _make_feature_map(rng, image, gt, label, spec.feature_channels,
                                         spec.feature_size, spec.noise),
    }
    for k, box in enumerate(boxes):
        logits, cls, direction, quality = _candidate_outputs(
            rng, gt, box, gt_box_obj, label, spec.noise, spec.embedding_dim)
        embedding = quality * f_text + (0.15 + 0.85 * (1.0 - quality)) * direction
        tensors[f"mask_logits_{k}"] = logits
        tensors[f"cls_logits_{k}"] = cls
        tensors[f"embedding_{k}"] = embedding

    return CaseBundle(
        case_id=f"case-{index:04d}",
        tensors=tensors,
        label=label,
        metadata={"spacing_mm": "1.0", "noise": repr(spec.noise)},
    )


def synth_dataset(spec: SyntheticSpec, out_dir) -> list[str]:
    """Write all case bundles under out_dir; returns the case ids."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(spec.n_cases):
        bundle = generate_case(spec, i)
        save_bundle(bundle, root / bundle.case_id)
        ids.append(bundle.case_id)
    return ids
