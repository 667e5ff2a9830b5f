"""Forward-only feature recalibration blocks.

Channel squeeze-excitation, a dilated-convolution pyramid, and an
adaptive spatial gate, all as pure numpy forwards over [C,H,W] maps.
Weights either come from a bundle or from a seeded random init; nothing
here is trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .aggregation import sigmoid

ASPP_DILATIONS = (1, 6, 12, 18)


@dataclass(frozen=True)
class Conv2dParams:
    weights: np.ndarray   # [Cout, Cin, kh, kw]
    bias: np.ndarray      # [Cout]
    dilation: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4:
            raise ValueError("conv weights must be [Cout, Cin, kh, kw]")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ValueError("'same' padding needs odd kernel extents")
        if b.shape != (w.shape[0],):
            raise ValueError("bias length must equal Cout")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class SeParams:
    w1: np.ndarray   # [Cr, C]
    w2: np.ndarray   # [C, Cr]

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w2.shape != (w1.shape[1], w1.shape[0]):
            raise ValueError("squeeze/excite weights must be [Cr,C] and [C,Cr]")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @classmethod
    def random(cls, channels: int, reduction: int, rng: np.random.Generator) -> "SeParams":
        cr = max(1, channels // reduction)
        scale1 = 1.0 / np.sqrt(channels)
        scale2 = 1.0 / np.sqrt(cr)
        return cls(rng.normal(0.0, scale1, (cr, channels)),
                   rng.normal(0.0, scale2, (channels, cr)))


def random_conv(cout: int, cin: int, k: int, dilation: int,
                rng: np.random.Generator) -> Conv2dParams:
    scale = 1.0 / np.sqrt(cin * k * k)
    return Conv2dParams(rng.normal(0.0, scale, (cout, cin, k, k)),
                        rng.normal(0.0, scale, cout), dilation)


def conv2d(x: np.ndarray, params: Conv2dParams) -> np.ndarray:
    """'same'-padded dilated cross-correlation over a [Cin,H,W] map."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != params.weights.shape[1]:
        raise ValueError(f"input channels {x.shape} do not match weights {params.weights.shape}")
    return kernels.conv2d_dilated(np.ascontiguousarray(x),
                                  np.ascontiguousarray(params.weights),
                                  np.ascontiguousarray(params.bias),
                                  params.dilation)


def se_recalibrate(x: np.ndarray, params: SeParams) -> np.ndarray:
    """Scale each channel by sigmoid(W2 relu(W1 GAP(x)))."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != params.w1.shape[1]:
        raise ValueError("channel count does not match squeeze weights")
    pooled = x.mean(axis=(1, 2))
    s = sigmoid(params.w2 @ np.maximum(params.w1 @ pooled, 0.0))
    return s[:, None, None] * x


def aspp_forward(x: np.ndarray, branches: list[Conv2dParams],
                 projection: Conv2dParams | None = None) -> np.ndarray:
    """Parallel dilated branches fused back to the input width.

    With a projection the branch outputs are concatenated along channels
    and reduced by the 1x1 projection; without one they are summed
    (requires equal branch widths).
    """
    outs = [conv2d(x, p) for p in branches]
    if projection is not None:
        stacked = np.concatenate(outs, axis=0)
        return conv2d(stacked, projection)
    base = outs[0]
    for o in outs[1:]:
        if o.shape != base.shape:
            raise ValueError("sum fusion requires equal branch output channels")
    return np.sum(outs, axis=0)


def adaptive_gate_fuse(x_tilde: np.ndarray, f_aspp: np.ndarray,
                       gate_conv: Conv2dParams) -> np.ndarray:
    """Pointwise convex blend x + G*(f - x) with a single-channel learned gate."""
    if x_tilde.shape != f_aspp.shape:
        raise ValueError("gate inputs must have equal shapes")
    if gate_conv.weights.shape[:2] != (1, 2 * x_tilde.shape[0]):
        raise ValueError("gate conv must map 2C channels to 1")
    gate_logits = conv2d(np.concatenate([x_tilde, f_aspp], axis=0), gate_conv)
    gate = sigmoid(gate_logits[0])
    return x_tilde + gate[None, :, :] * (f_aspp - x_tilde)


@dataclass(frozen=True)
class FeatureBlocks:
    """SE + pyramid + gate bundle applied as one forward pass."""

    se: SeParams
    branches: tuple[Conv2dParams, ...]
    projection: Conv2dParams
    gate: Conv2dParams

    @classmethod
    def random(cls, channels: int, seed: int, reduction: int = 4,
               branch_k: int = 3, dilations=ASPP_DILATIONS) -> "FeatureBlocks":
        rng = np.random.default_rng(seed)
        se = SeParams.random(channels, reduction, rng)
        branches = tuple(random_conv(channels, channels, branch_k, d, rng) for d in dilations)
        projection = random_conv(channels, channels * len(dilations), 1, 1, rng)
        gate = random_conv(1, 2 * channels, 1, 1, rng)
        return cls(se, branches, projection, gate)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x_tilde = se_recalibrate(x, self.se)
        f_aspp = aspp_forward(x_tilde, list(self.branches), self.projection)
        return adaptive_gate_fuse(x_tilde, f_aspp, self.gate)
