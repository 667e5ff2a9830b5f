"""Multi-candidate region aggregation.

Fuses K candidate predictions (mask logits, class logits, embeddings)
into a single denoised prediction: temperature-softmax saliency weights,
cosine-similarity semantic weights, their convex interpolation, soft
fusion per modality, a confidence partition into high/low sets, a
stop-gradient teacher mask from the high set, and a decay-weighted
consistency penalty on the low set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max())
    return z / z.sum()


@dataclass(frozen=True)
class CandidatePrediction:
    """Per-candidate outputs of the promptable segmenter."""

    mask_logits: np.ndarray   # [H, W]
    cls_logits: np.ndarray    # [C]
    embedding: np.ndarray     # [D]
    saliency: float

    def __post_init__(self):
        for name in ("mask_logits", "cls_logits", "embedding"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"candidate {name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if not np.isfinite(self.saliency):
            raise ValueError("candidate saliency must be finite")


@dataclass(frozen=True)
class McraConfig:
    tau_sal: float = 0.5
    tau_sem: float = 0.5
    alpha: float = 0.5
    theta: float | None = None    # None resolves to 1/K at aggregation time
    gamma: float = 2.0
    fuse_probabilities: bool = False   # fuse sigmoid(M_j) instead of raw logits
    cons_reduction: str = "sum"        # "sum" | "mean" over pixels

    def __post_init__(self):
        if self.tau_sal <= 0 or self.tau_sem <= 0:
            raise ValueError("temperatures must be positive")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0,1]")
        if self.theta is not None and not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0,1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.cons_reduction not in ("sum", "mean"):
            raise ValueError("cons_reduction must be 'sum' or 'mean'")


@dataclass(frozen=True)
class AggregationResult:
    w_sal: np.ndarray
    w_sem: np.ndarray
    w_final: np.ndarray
    fused_mask: np.ndarray
    fused_logits: np.ndarray
    fused_embedding: np.ndarray
    high_set: tuple[int, ...]
    low_set: tuple[int, ...]
    teacher: np.ndarray
    consistency_loss: float

    @property
    def fused_probabilities(self) -> np.ndarray:
        """sigmoid of the fused mask logits, for metric computation."""
        return sigmoid(self.fused_mask)


def saliency_weights(s: np.ndarray, tau_sal: float) -> np.ndarray:
    """softmax(s / tau_sal); order-preserving, sums to one."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("saliency scores must be a non-empty vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("saliency scores must be finite")
    if tau_sal <= 0:
        raise ValueError("tau_sal must be positive")
    return softmax(s / tau_sal)


def cosine_scores(embeddings: np.ndarray, f_text: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine of each embedding against the text vector.

    Zero-norm rows (or a zero-norm text vector) get cosine 0 rather than
    an error; the returned boolean mask flags them.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    t = np.asarray(f_text, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    tnorm = np.linalg.norm(t)
    degenerate = (norms == 0.0) | (tnorm == 0.0)
    denom = np.where(degenerate, 1.0, norms * tnorm)
    scores = np.where(degenerate, 0.0, e @ t / denom)
    if degenerate.any():
        log.warning("zero-norm embedding(s) at indices %s: cosine set to 0",
                    np.nonzero(degenerate)[0].tolist())
    return scores, degenerate


def semantic_weights(embeddings: np.ndarray, f_text: np.ndarray, tau_sem: float) -> np.ndarray:
    """softmax of cosine similarities at temperature tau_sem."""
    if tau_sem <= 0:
        raise ValueError("tau_sem must be positive")
    scores, _ = cosine_scores(embeddings, f_text)
    return softmax(scores / tau_sem)


def final_weights(w_sal: np.ndarray, w_sem: np.ndarray, alpha: float) -> np.ndarray:
    """(1 - alpha) * w_sal + alpha * w_sem; stays a distribution."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0,1]")
    w_sal = np.asarray(w_sal, dtype=np.float64)
    w_sem = np.asarray(w_sem, dtype=np.float64)
    return (1.0 - alpha) * w_sal + alpha * w_sem


def soft_fuse(candidates: list[CandidatePrediction], w_final: np.ndarray,
              fuse_probabilities: bool = False):
    """Per-modality convex combination with the final weights."""
    w = np.asarray(w_final, dtype=np.float64)
    if len(candidates) != w.size:
        raise ValueError("weight count must match candidate count")
    shape = candidates[0].mask_logits.shape
    for c in candidates[1:]:
        if (c.mask_logits.shape != shape
                or c.cls_logits.shape != candidates[0].cls_logits.shape
                or c.embedding.shape != candidates[0].embedding.shape):
            raise ValueError("candidate tensor shapes are inconsistent")
    masks = np.stack([sigmoid(c.mask_logits) if fuse_probabilities else c.mask_logits
                      for c in candidates])
    fused_mask = np.tensordot(w, masks, axes=1)
    fused_logits = np.tensordot(w, np.stack([c.cls_logits for c in candidates]), axes=1)
    fused_embedding = np.tensordot(w, np.stack([c.embedding for c in candidates]), axes=1)
    return fused_mask, fused_logits, fused_embedding


def partition_confidence(w_final: np.ndarray, theta: float) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Indices with weight >= theta go high; if none qualify the argmax is promoted."""
    w = np.asarray(w_final, dtype=np.float64)
    high = tuple(int(j) for j in range(w.size) if w[j] >= theta)
    if not high:
        high = (int(np.argmax(w)),)
    low = tuple(j for j in range(w.size) if j not in high)
    return high, low


def teacher_mask(candidates: list[CandidatePrediction], high_set, w_final: np.ndarray) -> np.ndarray:
    """sigmoid of the L1-renormalized high-confidence mask-logit blend.

    The result is a stop-gradient target: every gradient computation in
    this module treats it as a constant.
    """
    if not high_set:
        raise ValueError("high-confidence set must be non-empty")
    w = np.asarray(w_final, dtype=np.float64)
    total = sum(w[j] for j in high_set)
    blend = np.zeros_like(candidates[0].mask_logits)
    for j in high_set:
        blend += (w[j] / total) * candidates[j].mask_logits
    return sigmoid(blend)


def _decay(w_j: float, gamma: float) -> float:
    return (1.0 - w_j) ** gamma


def consistency_loss(candidates: list[CandidatePrediction], low_set, w_final: np.ndarray,
                     teacher: np.ndarray, gamma: float, reduction: str = "sum") -> float:
    """Decay-weighted squared error between low-set masks and the teacher.

    (1/|L|) * sum_{j in L} (1 - w_j)^gamma * ||sigmoid(M_j) - teacher||^2;
    the norm is a sum over pixels (``reduction="mean"`` divides by HW).
    Empty low set returns 0.
    """
    if not low_set:
        return 0.0
    w = np.asarray(w_final, dtype=np.float64)
    scale = 1.0 / teacher.size if reduction == "mean" else 1.0
    total = 0.0
    for j in low_set:
        resid = sigmoid(candidates[j].mask_logits) - teacher
        total += _decay(w[j], gamma) * scale * float(np.sum(resid * resid))
    return total / len(low_set)


def consistency_loss_grad(candidates: list[CandidatePrediction], low_set, w_final: np.ndarray,
                          teacher: np.ndarray, gamma: float,
                          reduction: str = "sum") -> list[np.ndarray]:
    """Analytic d(consistency loss)/d(mask logits) per candidate.

    High-set candidates get an exact zero gradient: they influence the
    loss only through the teacher, which is a stop-gradient constant.
    """
    w = np.asarray(w_final, dtype=np.float64)
    grads = [np.zeros_like(c.mask_logits) for c in candidates]
    if not low_set:
        return grads
    scale = 1.0 / teacher.size if reduction == "mean" else 1.0
    for j in low_set:
        p = sigmoid(candidates[j].mask_logits)
        grads[j] = (2.0 * _decay(w[j], gamma) * scale / len(low_set)) * (p - teacher) * p * (1.0 - p)
    return grads


def aggregate(candidates: list[CandidatePrediction], f_text: np.ndarray,
              cfg: McraConfig = McraConfig()) -> AggregationResult:
    """Run the full aggregation over K candidates."""
    if not candidates:
        raise ValueError("need at least one candidate")
    k = len(candidates)
    s = np.array([c.saliency for c in candidates], dtype=np.float64)
    w_sal = saliency_weights(s, cfg.tau_sal)
    embeddings = np.stack([c.embedding for c in candidates])
    w_sem = semantic_weights(embeddings, f_text, cfg.tau_sem)
    w_final = final_weights(w_sal, w_sem, cfg.alpha)
    theta = cfg.theta if cfg.theta is not None else 1.0 / k
    high, low = partition_confidence(w_final, theta)
    fused_mask, fused_logits, fused_embedding = soft_fuse(
        candidates, w_final, fuse_probabilities=cfg.fuse_probabilities)
    teacher = teacher_mask(candidates, high, w_final)
    loss = consistency_loss(candidates, low, w_final, teacher, cfg.gamma,
                            reduction=cfg.cons_reduction)
    return AggregationResult(
        w_sal=w_sal, w_sem=w_sem, w_final=w_final,
        fused_mask=fused_mask, fused_logits=fused_logits, fused_embedding=fused_embedding,
        high_set=high, low_set=low, teacher=teacher, consistency_loss=loss)
