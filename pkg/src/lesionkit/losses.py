"""Stage-1 objective terms with analytic gradients.

Class-balanced focal loss for the diagnosis logits, BCE + soft Dice for
the localization map, and a symmetric InfoNCE auxiliary for text/region
alignment. Gradients are hand-derived and verified against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import sigmoid


@dataclass(frozen=True)
class Stage1Weights:
    lambda_cls: float = 1.0
    lambda_loc: float = 1.0
    lambda_text: float = 0.5

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_loc < 0 or self.lambda_text < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_cls == self.lambda_loc == self.lambda_text == 0:
            raise ValueError("at least one loss weight must be positive")


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def focal_loss(logits: np.ndarray, labels: np.ndarray, gamma_f: float = 2.0,
               class_weights=(1.0, 1.0)) -> float:
    """Mean of -w_y (1-p_y)^gamma log p_y over samples, p = softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    labels = np.asarray(labels, dtype=np.intp)
    if gamma_f < 0:
        raise ValueError("gamma_f must be >= 0")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    weights = np.asarray(class_weights, dtype=np.float64)
    p = _softmax_rows(logits)
    n = logits.shape[0]
    py = p[np.arange(n), labels]
    return float(np.mean(weights[labels] * (1.0 - py) ** gamma_f * -np.log(py)))


def focal_loss_grad(logits: np.ndarray, labels: np.ndarray, gamma_f: float = 2.0,
                    class_weights=(1.0, 1.0)) -> np.ndarray:
    """d(focal_loss)/d(logits), same shape as the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    weights = np.asarray(class_weights, dtype=np.float64)
    p = _softmax_rows(logits)
    n, c = p.shape
    py = p[np.arange(n), labels]
    t = 1.0 - py
    # d/dq of -w (1-q)^g log q, with the q->1 limit handled explicitly
    with np.errstate(divide="ignore", invalid="ignore"):
        dldq = np.where(t > 0.0,
                        weights[labels] * (gamma_f * t ** (gamma_f - 1.0) * np.log(py)
                                           - t ** gamma_f / py),
                        -weights[labels] * (1.0 if gamma_f == 0.0 else 0.0))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    dqdz = py[:, None] * (onehot - p)
    return dldq[:, None] * dqdz / n


def bce_dice_loss(mask_logits: np.ndarray, gt: np.ndarray,
                  w_bce: float = 0.5, w_dice: float = 0.5, smooth: float = 1.0) -> float:
    """w_bce * BCE(sigmoid(m), gt) + w_dice * (1 - soft Dice), mean-pixel BCE."""
    m = np.asarray(mask_logits, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if not np.isin(g, (0, 1)).all():
        raise ValueError("ground truth must be binary")
    p = sigmoid(m)
    # log-sigmoid written via logaddexp for saturation safety
    bce = float(np.mean(np.logaddexp(0.0, m) - g * m))
    inter = float(np.sum(p * g))
    dice = (2.0 * inter + smooth) / (float(np.sum(p)) + float(np.sum(g)) + smooth)
    return w_bce * bce + w_dice * (1.0 - dice)


def bce_dice_grad(mask_logits: np.ndarray, gt: np.ndarray,
                  w_bce: float = 0.5, w_dice: float = 0.5, smooth: float = 1.0) -> np.ndarray:
    """d(bce_dice_loss)/d(mask_logits)."""
    m = np.asarray(mask_logits, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    p = sigmoid(m)
    grad_bce = (p - g) / m.size
    denom = float(np.sum(p)) + float(np.sum(g)) + smooth
    num = 2.0 * float(np.sum(p * g)) + smooth
    ddice_dp = (2.0 * g * denom - num) / denom ** 2
    grad_dice = -ddice_dp * p * (1.0 - p)
    return w_bce * grad_bce + w_dice * grad_dice


def _unit_rows(x, what):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError(f"zero-norm {what} row")
    return x / norms, norms[:, 0]


def text_aux_loss(region_embeddings: np.ndarray, text_embeddings: np.ndarray,
                  temperature: float = 0.07) -> float:
    """Symmetric InfoNCE over cosine similarities of matched pairs."""
    r = np.asarray(region_embeddings, dtype=np.float64)
    t = np.asarray(text_embeddings, dtype=np.float64)
    if r.shape != t.shape or r.ndim != 2 or r.shape[0] < 2:
        raise ValueError("need matching [N,D] embedding matrices with N >= 2")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rn, _ = _unit_rows(r, "region embedding")
    tn, _ = _unit_rows(t, "text embedding")
    s = rn @ tn.T / temperature
    n = r.shape[0]
    rows = _softmax_rows(s)
    cols = _softmax_rows(s.T)
    diag = np.arange(n)
    return float(-0.5 * (np.mean(np.log(rows[diag, diag]))
                         + np.mean(np.log(cols[diag, diag]))))


def text_aux_grad(region_embeddings: np.ndarray, text_embeddings: np.ndarray,
                  temperature: float = 0.07) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of text_aux_loss w.r.t. both embedding matrices."""
    r = np.asarray(region_embeddings, dtype=np.float64)
    t = np.asarray(text_embeddings, dtype=np.float64)
    rn, rnorm = _unit_rows(r, "region embedding")
    tn, tnorm = _unit_rows(t, "text embedding")
    c = rn @ tn.T
    s = c / temperature
    n = r.shape[0]
    rows = _softmax_rows(s)
    cols = _softmax_rows(s.T).T
    eye = np.eye(n)
    g = ((rows - eye) + (cols - eye)) / (2.0 * n * temperature)
    grad_r = (g @ tn - (g * c).sum(axis=1, keepdims=True) * rn) / rnorm[:, None]
    grad_t = (g.T @ rn - (g * c).sum(axis=0)[:, None] * tn) / tnorm[:, None]
    return grad_r, grad_t


def stage1_loss(cls_term: float, loc_term: float, text_term: float,
                w: Stage1Weights = Stage1Weights()) -> float:
    """Weighted sum of the three stage-1 terms."""
    terms = (cls_term, loc_term, text_term)
    if not all(np.isfinite(terms)):
        raise ValueError("loss terms must be finite")
    return w.lambda_cls * cls_term + w.lambda_loc * loc_term + w.lambda_text * text_term
