"""Dual-branch logit fusion and the evaluation metric suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import softmax


def fuse_logits(y_sam: np.ndarray, y_rad: np.ndarray, alpha_ext: float = 1.0,
                probability_space: bool = False) -> np.ndarray:
    """Additive fusion y_sam + alpha_ext * y_rad.

    With probability_space=True both inputs are softmaxed first and the
    blended probabilities are returned renormalized.
    """
    a = np.asarray(y_sam, dtype=np.float64)
    b = np.asarray(y_rad, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("branch logits must have equal shapes")
    if alpha_ext < 0:
        raise ValueError("alpha_ext must be >= 0")
    if probability_space:
        fused = softmax(a) + alpha_ext * softmax(b)
        return fused / fused.sum()
    return a + alpha_ext * b


def dice_iou(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Overlap coefficients for binary masks; two empty masks score (1, 1)."""
    p = np.asarray(pred)
    g = np.asarray(gt)
    if not np.isin(p, (0, 1)).all() or not np.isin(g, (0, 1)).all():
        raise ValueError("masks must be binary")
    inter = float(np.sum((p > 0) & (g > 0)))
    total = float(p.sum() + g.sum())
    if total == 0.0:
        return 1.0, 1.0
    dice = 2.0 * inter / total
    iou = inter / (total - inter)
    return dice, iou


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC (Mann-Whitney with ties counted half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if not np.isin(labels, (0, 1)).all() or np.unique(labels).size < 2:
        raise ValueError("labels must contain both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class DiagnosticReport:
    acc: float
    auc: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float
    precision_defined: bool = True

    def counts_total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def classify_report(scores: np.ndarray, labels: np.ndarray,
                    threshold: float = 0.5) -> DiagnosticReport:
    """Threshold scores at >= threshold and report the standard metric set.

    Precision with no predicted positives is reported as 0 with the
    precision_defined flag cleared.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    auc = roc_auc(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    acc = (tp + tn) / labels.size
    sens = tp / (tp + fn)
    spec = tn / (tn + fp)
    defined = (tp + fp) > 0
    prec = tp / (tp + fp) if defined else 0.0
    f1 = 2.0 * prec * sens / (prec + sens) if (prec + sens) > 0 else 0.0
    return DiagnosticReport(acc=acc, auc=auc, sensitivity=sens, specificity=spec,
                            precision=prec, f1=f1, tp=tp, fp=fp, tn=tn, fn=fn,
                            threshold=threshold, precision_defined=defined)


def cross_correlation(deep: np.ndarray, radiomic: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of every (deep, radiomic) column pair.

    Returns (corr, defined): pairs involving a constant column get
    correlation 0 and defined=False.
    """
    a = np.asarray(deep, dtype=np.float64)
    b = np.asarray(radiomic, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError("need matrices with equal row counts")
    if a.shape[0] < 3:
        raise ValueError("need at least 3 rows")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    an = np.sqrt((ac ** 2).sum(axis=0))
    bn = np.sqrt((bc ** 2).sum(axis=0))
    defined = (an[:, None] > 0) & (bn[None, :] > 0)
    denom = np.where(defined, an[:, None] * bn[None, :], 1.0)
    corr = np.where(defined, ac.T @ bc / denom, 0.0)
    return corr, defined
