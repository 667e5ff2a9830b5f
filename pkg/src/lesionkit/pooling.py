"""Mask-guided multi-pooling and the small diagnosis head.

Pools a shared [C,H,W] feature map four ways (lesion-masked, box-masked,
global average, global max), concatenates in that fixed order, and feeds
a two-layer MLP. The head is the only trained component; training is
seeded full-batch gradient descent on the focal loss with hand-derived
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import focal_loss, focal_loss_grad

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class PoolVector:
    f_lesion: np.ndarray
    f_box: np.ndarray
    f_gap: np.ndarray
    f_gmp: np.ndarray

    @property
    def concatenated(self) -> np.ndarray:
        # order is part of the contract: [lesion; box; gap; gmp]
        return np.concatenate([self.f_lesion, self.f_box, self.f_gap, self.f_gmp])


def masked_pool(x: np.ndarray, mask: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-channel mask-weighted mean: sum(x*mask) / (sum(mask) + eps)."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.shape[1:] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match features {x.shape}")
    if mask.min() < 0 or mask.max() > 1:
        raise ValueError("mask values must lie in [0,1]")
    return (x * mask).sum(axis=(1, 2)) / (mask.sum() + eps)


def global_pools(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and max."""
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=(1, 2)), x.max(axis=(1, 2))


def assemble_pool(x: np.ndarray, lesion_mask: np.ndarray, box_mask: np.ndarray,
                  eps: float = DEFAULT_EPS) -> PoolVector:
    """Build the four-component pooled descriptor."""
    f_lesion = masked_pool(x, lesion_mask, eps)
    f_box = masked_pool(x, box_mask, eps)
    f_gap, f_gmp = global_pools(x)
    return PoolVector(f_lesion, f_box, f_gap, f_gmp)


@dataclass(frozen=True)
class MlpHead:
    w1: np.ndarray   # [hidden, d_in]
    b1: np.ndarray
    w2: np.ndarray   # [n_cls, hidden]
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"head parameter {name} must be finite")
            object.__setattr__(self, name, arr)
        if self.w2.shape[1] != self.w1.shape[0] or self.b1.shape != (self.w1.shape[0],) \
                or self.b2.shape != (self.w2.shape[0],):
            raise ValueError("inconsistent head parameter shapes")

    @classmethod
    def random(cls, d_in: int, hidden: int = 128, n_cls: int = 2, seed: int = 0) -> "MlpHead":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(d_in), (hidden, d_in)),
                   np.zeros(hidden),
                   rng.normal(0.0, 1.0 / np.sqrt(hidden), (n_cls, hidden)),
                   np.zeros(n_cls))


def mlp_forward(features: np.ndarray, head: MlpHead) -> np.ndarray:
    """Logits for one pooled vector or a [N, d_in] batch."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != head.w1.shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} does not match head ({head.w1.shape[1]})")
    hidden = np.maximum(x @ head.w1.T + head.b1, 0.0)
    logits = hidden @ head.w2.T + head.b2
    return logits[0] if single else logits


def head_loss_and_grads(x: np.ndarray, labels: np.ndarray, head: MlpHead,
                        gamma_f: float, class_weights) -> tuple[float, dict[str, np.ndarray]]:
    """Focal loss over a batch plus gradients for every head parameter."""
    z1 = x @ head.w1.T + head.b1
    a1 = np.maximum(z1, 0.0)
    logits = a1 @ head.w2.T + head.b2
    loss = focal_loss(logits, labels, gamma_f, class_weights)
    dlogits = focal_loss_grad(logits, labels, gamma_f, class_weights)
    da1 = dlogits @ head.w2
    dz1 = da1 * (z1 > 0.0)
    grads = {
        "w2": dlogits.T @ a1,
        "b2": dlogits.sum(axis=0),
        "w1": dz1.T @ x,
        "b1": dz1.sum(axis=0),
    }
    return loss, grads


def balanced_class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights, mean one."""
    labels = np.asarray(labels, dtype=np.intp)
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    return labels.size / (2.0 * counts)


def train_head(dataset, head: MlpHead | None = None, gamma_f: float = 2.0,
               class_balanced: bool = True, epochs: int = 200, lr: float = 0.05,
               hidden: int = 128, seed: int = 0) -> tuple[MlpHead, list[float]]:
    """Full-batch gradient descent on the focal loss.

    The seed fixes the random init when no head is supplied; the descent
    itself is deterministic. Returns the trained head and the per-epoch
    loss history. Refuses single-class datasets.
    """
    x = np.stack([np.asarray(f.concatenated if isinstance(f, PoolVector) else f,
                             dtype=np.float64) for f, _ in dataset])
    labels = np.array([int(lbl) for _, lbl in dataset], dtype=np.intp)
    if np.unique(labels).size < 2:
        raise ValueError("training requires both classes present")
    if head is None:
        head = MlpHead.random(x.shape[1], hidden=hidden, seed=seed)
    weights = balanced_class_weights(labels) if class_balanced else np.ones(2)
    params = {"w1": head.w1.copy(), "b1": head.b1.copy(),
              "w2": head.w2.copy(), "b2": head.b2.copy()}
    history = []
    for _ in range(epochs):
        current = MlpHead(**params)
        loss, grads = head_loss_and_grads(x, labels, current, gamma_f, weights)
        history.append(loss)
        for name in params:
            params[name] = params[name] - lr * grads[name]
    return MlpHead(**params), history
