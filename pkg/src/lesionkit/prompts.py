"""Candidate box prompts from activation heatmaps.

Binarizes the heatmap at several thresholds, turns connected components
into scored boxes, then rank + IoU-deduplicate down to the top-k. All
coordinates are inclusive pixel indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class CandidateBox:
    r0: int
    c0: int
    r1: int
    c1: int
    score: float
    source_threshold: float

    def __post_init__(self):
        if not (0 <= self.r0 <= self.r1 and 0 <= self.c0 <= self.c1):
            raise ValueError(f"invalid box extents {(self.r0, self.c0, self.r1, self.c1)}")

    def area(self) -> int:
        return (self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)

    def extents(self) -> tuple[int, int, int, int]:
        return (self.r0, self.c0, self.r1, self.c1)


DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class PromptConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    top_k: int = 3
    iou_dedup: float = 0.5
    min_area: int = 4
    eight_connectivity: bool = True
    component_score: bool = False  # score over component pixels instead of the box rectangle

    def __post_init__(self):
        ts = tuple(float(t) for t in self.thresholds)
        if not ts or any(not (0.0 < t < 1.0) for t in ts):
            raise ValueError("thresholds must lie in (0,1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", ts)
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not (0.0 <= self.iou_dedup <= 1.0):
            raise ValueError("iou_dedup must lie in [0,1]")
        if self.min_area < 1:
            raise ValueError("min_area must be positive")


def connected_components(mask: np.ndarray, eight: bool = True) -> list[np.ndarray]:
    """Connected components of a binary mask as (n_i, 2) pixel-index arrays.

    Components are disjoint, cover the foreground, and are returned in
    raster order of their first pixel (deterministic).
    """
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    labels = kernels.label_components(np.ascontiguousarray(mask, dtype=np.uint8), eight)
    n = labels.max()
    if n == 0:
        return []
    order = np.argsort(labels.ravel(), kind="stable")
    flat_sorted = labels.ravel()[order]
    bounds = np.searchsorted(flat_sorted, np.arange(1, n + 2))
    h, w = mask.shape
    comps = []
    for i in range(n):
        flat = order[bounds[i]:bounds[i + 1]]
        comps.append(np.column_stack((flat // w, flat % w)))
    comps.sort(key=lambda px: int((px[:, 0] * w + px[:, 1]).min()))
    return comps


def boxes_at_threshold(heatmap: np.ndarray, threshold: float, min_area: int = 1,
                       eight: bool = True, component_score: bool = False) -> list[CandidateBox]:
    """One box per connected component of {heatmap >= threshold}."""
    heatmap = np.asarray(heatmap, dtype=np.float64)
    boxes = []
    for comp in connected_components((heatmap >= threshold).astype(np.uint8), eight=eight):
        if comp.shape[0] < min_area:
            continue
        r0, c0 = comp.min(axis=0)
        r1, c1 = comp.max(axis=0)
        if component_score:
            score = float(heatmap[comp[:, 0], comp[:, 1]].mean())
        else:
            score = float(heatmap[r0:r1 + 1, c0:c1 + 1].mean())
        boxes.append(CandidateBox(int(r0), int(c0), int(r1), int(c1), score, float(threshold)))
    return boxes


def iou_box(a: CandidateBox, b: CandidateBox) -> float:
    """IoU on the inclusive pixel grid."""
    ir0, ic0 = max(a.r0, b.r0), max(a.c0, b.c0)
    ir1, ic1 = min(a.r1, b.r1), min(a.c1, b.c1)
    if ir0 > ir1 or ic0 > ic1:
        return 0.0
    inter = (ir1 - ir0 + 1) * (ic1 - ic0 + 1)
    union = a.area() + b.area() - inter
    return inter / union


def generate_candidates(heatmap: np.ndarray, cfg: PromptConfig = PromptConfig()) -> list[CandidateBox]:
    """Pool boxes over all thresholds, rank, suppress, truncate to top-k.

    Ordering is score-descending with deterministic tie-breaks (higher
    source threshold first, then lexicographically smaller extents);
    greedy suppression removes boxes with IoU > cfg.iou_dedup against any
    kept box. May return an empty list on all-background heatmaps.
    """
    pooled = []
    for t in cfg.thresholds:
        pooled.extend(boxes_at_threshold(heatmap, t, cfg.min_area,
                                         eight=cfg.eight_connectivity,
                                         component_score=cfg.component_score))
    pooled.sort(key=lambda b: (-b.score, -b.source_threshold, b.extents()))
    kept: list[CandidateBox] = []
    for box in pooled:
        if len(kept) >= cfg.top_k:
            break
        if all(iou_box(box, k) <= cfg.iou_dedup for k in kept):
            kept.append(box)
    return kept


def fallback_box(heatmap: np.ndarray, top_fraction: float = 0.01) -> CandidateBox:
    """Tight box around the top-fraction hottest pixels.

    Pipeline fallback for degenerate heatmaps where no threshold yields a
    candidate; the source threshold is reported as 0.0.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    cutoff = np.quantile(heatmap, 1.0 - top_fraction)
    rows, cols = np.nonzero(heatmap >= cutoff)
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    score = float(heatmap[r0:r1 + 1, c0:c1 + 1].mean())
    return CandidateBox(r0, c0, r1, c1, score, 0.0)


def fused_box(boxes: list[CandidateBox], weights: np.ndarray,
              shape: tuple[int, int]) -> tuple[int, int, int, int]:
    """Weight-averaged box extents, rounded outward and clipped to shape."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    r0 = int(np.floor(sum(wi * b.r0 for wi, b in zip(w, boxes))))
    c0 = int(np.floor(sum(wi * b.c0 for wi, b in zip(w, boxes))))
    r1 = int(np.ceil(sum(wi * b.r1 for wi, b in zip(w, boxes))))
    c1 = int(np.ceil(sum(wi * b.c1 for wi, b in zip(w, boxes))))
    return (max(0, r0), max(0, c0), min(shape[0] - 1, r1), min(shape[1] - 1, c1))


def box_mask(extents: tuple[int, int, int, int], shape: tuple[int, int]) -> np.ndarray:
    """Filled-rectangle binary mask for inclusive extents."""
    r0, c0, r1, c1 = extents
    mask = np.zeros(shape, dtype=np.float64)
    mask[r0:r1 + 1, c0:c1 + 1] = 1.0
    return mask
