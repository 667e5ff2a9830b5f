"""Explicit lesion descriptors over filtered images.

Five feature families (first-order intensity, 2-d shape, co-occurrence,
run-length, and size-zone texture) computed on the original image, four
single-level Haar sub-bands, and a bank of Laplacian-of-Gaussian
responses. Conventions that differ between published toolkits are pinned
here: equal-width range-relative quantization, population moments,
natural-log entropies, crack-boundary perimeter, and matrix-averaged
symmetric co-occurrence over four offsets. The default configuration
yields 578 named features per case in a deterministic order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
RUN_DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))
LOG_SIGMAS_MM = (1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class RadiomicsConfig:
    n_levels: int = 32
    spacing_mm: float = 0.1
    log_sigmas_mm: tuple[float, ...] = LOG_SIGMAS_MM

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError("need at least two gray levels")
        if self.spacing_mm <= 0:
            raise ValueError("pixel spacing must be positive")
        if any(s <= 0 for s in self.log_sigmas_mm):
            raise ValueError("filter scales must be positive")


@dataclass(frozen=True)
class QuantizedImage:
    """Integer gray levels in [1, n_levels] on the ROI, 0 elsewhere."""

    levels: np.ndarray
    n_levels: int
    mask: np.ndarray

    def roi_levels(self) -> np.ndarray:
        return self.levels[self.mask > 0]


def quantize(image: np.ndarray, mask: np.ndarray, n_levels: int) -> QuantizedImage:
    """Equal-width binning of masked intensities into [1, n_levels].

    Bin edges span the masked min/max, so the result is invariant to
    intensity shifts and positive rescaling; a constant ROI maps to
    level 1 everywhere.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = (np.asarray(mask) > 0).astype(np.uint8)
    if mask.sum() == 0:
        raise ValueError("empty mask")
    if n_levels < 2:
        raise ValueError("need at least two gray levels")
    vals = image[mask > 0]
    lo, hi = vals.min(), vals.max()
    levels = np.zeros(image.shape, dtype=np.int64)
    if hi == lo:
        levels[mask > 0] = 1
    else:
        width = (hi - lo) / n_levels
        binned = np.floor((image - lo) / width).astype(np.int64) + 1
        levels[mask > 0] = np.clip(binned[mask > 0], 1, n_levels)
    return QuantizedImage(levels, n_levels, mask)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

def _pad_even(image: np.ndarray) -> np.ndarray:
    h, w = image.shape
    return np.pad(image, ((0, h % 2), (0, w % 2)), mode="edge")


def haar_coefficients(image: np.ndarray) -> dict[str, np.ndarray]:
    """Orthonormal single-level Haar coefficients at half resolution.

    Band letters follow (horizontal filter, vertical filter): HL is
    highpass across columns, so vertical edges land there. Satisfies
    Parseval: the four coefficient energies sum to the image energy.
    """
    x = _pad_even(np.asarray(image, dtype=np.float64))
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    return {
        "LL": (a + b + c + d) / 2.0,
        "HL": (a - b + c - d) / 2.0,
        "LH": (a + b - c - d) / 2.0,
        "HH": (a - b - c + d) / 2.0,
    }


def filter_wavelet(image: np.ndarray) -> dict[str, np.ndarray]:
    """Haar sub-bands replicated back to the input size.

    ``wavelet-H`` is the diagonal-detail (HH) band; the other bands are
    emitted alongside it so either reading of a single-letter band name
    is covered.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    coeffs = haar_coefficients(image)
    upsampled = {k: np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w]
                 for k, v in coeffs.items()}
    return {
        "wavelet-L": upsampled["LL"],
        "wavelet-LH": upsampled["LH"],
        "wavelet-HL": upsampled["HL"],
        "wavelet-H": upsampled["HH"],
    }


def filter_log(image: np.ndarray, sigma_mm: float, spacing_mm: float) -> np.ndarray:
    """Laplacian-of-Gaussian response at a physical scale.

    sigma in pixels is sigma_mm / spacing_mm; the kernel is truncated at
    radius ceil(4 sigma), DC-corrected so flat and affine regions give an
    exactly-zero interior response, and applied with edge replication.
    A bright dot yields a negative central response.
    """
    if sigma_mm <= 0 or spacing_mm <= 0:
        raise ValueError("sigma and spacing must be positive")
    image = np.asarray(image, dtype=np.float64)
    sigma = sigma_mm / spacing_mm
    radius = int(np.ceil(4.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    g2 = (xs ** 2 / sigma ** 4 - 1.0 / sigma ** 2) * g
    g2 -= g2.mean()
    padded = np.pad(image, radius, mode="edge")
    # separable identity: LoG = g''(x) g(y) + g(x) g''(y)
    rows_g2 = kernels.correlate_rows_valid(np.ascontiguousarray(padded), g2)
    rows_g = kernels.correlate_rows_valid(np.ascontiguousarray(padded), g)
    term1 = kernels.correlate_rows_valid(np.ascontiguousarray(rows_g2.T), g).T
    term2 = kernels.correlate_rows_valid(np.ascontiguousarray(rows_g.T), g2).T
    return term1 + term2


def log_filter_name(sigma_mm: float) -> str:
    whole = int(round(sigma_mm))
    frac = int(round((sigma_mm - whole) * 10))
    return f"log-sigma-{whole}-{frac}-mm-3D"


# ---------------------------------------------------------------------------
# first order
# ---------------------------------------------------------------------------

FIRST_ORDER_NAMES = (
    "Mean", "Variance", "StandardDeviation", "Skewness", "Kurtosis", "Energy",
    "Entropy", "Minimum", "Maximum", "Range", "Median", "Percentile10",
    "Percentile25", "Percentile75", "Percentile90", "InterquartileRange",
    "MeanAbsoluteDeviation", "RobustMeanAbsoluteDeviation", "RootMeanSquared",
    "Uniformity",
)


def first_order(image: np.ndarray, mask: np.ndarray, n_levels: int = 32) -> dict[str, float]:
    """Intensity-distribution statistics over the ROI.

    Population moment conventions; entropy and uniformity come from the
    equal-width n_levels histogram; skewness and kurtosis of a constant
    ROI are defined as 0.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = (np.asarray(mask) > 0)
    v = image[mask]
    if v.size == 0:
        raise ValueError("empty mask")
    mean = float(v.mean())
    var = float(v.var())
    std = float(np.sqrt(var))
    centered = v - mean
    skew = float(np.mean(centered ** 3) / std ** 3) if std > 0 else 0.0
    kurt = float(np.mean(centered ** 4) / std ** 4) if std > 0 else 0.0
    q = quantize(image, mask, n_levels)
    hist = np.bincount(q.roi_levels(), minlength=n_levels + 1)[1:].astype(np.float64)
    p = hist / hist.sum()
    nz = p[p > 0]
    p10, p25, p50, p75, p90 = np.percentile(v, [10, 25, 50, 75, 90])
    robust = v[(v >= p10) & (v <= p90)]
    rmad = float(np.mean(np.abs(robust - robust.mean()))) if robust.size else 0.0
    return {
        "Mean": mean,
        "Variance": var,
        "StandardDeviation": std,
        "Skewness": skew,
        "Kurtosis": kurt,
        "Energy": float(np.sum(v ** 2)),
        "Entropy": float(-np.sum(nz * np.log(nz))),
        "Minimum": float(v.min()),
        "Maximum": float(v.max()),
        "Range": float(v.max() - v.min()),
        "Median": float(p50),
        "Percentile10": float(p10),
        "Percentile25": float(p25),
        "Percentile75": float(p75),
        "Percentile90": float(p90),
        "InterquartileRange": float(p75 - p25),
        "MeanAbsoluteDeviation": float(np.mean(np.abs(centered))),
        "RobustMeanAbsoluteDeviation": rmad,
        "RootMeanSquared": float(np.sqrt(np.mean(v ** 2))),
        "Uniformity": float(np.sum(p ** 2)),
    }


# ---------------------------------------------------------------------------
# shape
# ---------------------------------------------------------------------------

SHAPE_NAMES = (
    "Area", "Perimeter", "PerimeterToArea", "Circularity", "MajorAxisLength",
    "MinorAxisLength", "Elongation", "MaximumDiameter",
)


def shape2d(mask: np.ndarray) -> dict[str, float]:
    """Morphology of the binary ROI.

    Perimeter counts exposed pixel edges (crack boundary); circularity
    applies the pi/4 isotropic correction to that length so digital discs
    score close to 1. Axis lengths come from PCA of pixel coordinates
    using the filled-ellipse convention (full axis = 4 sqrt(eigenvalue)).
    """
    m = (np.asarray(mask) > 0)
    area = float(m.sum())
    if area == 0:
        raise ValueError("empty mask")
    horiz = np.sum(m[:, :-1] & m[:, 1:])
    vert = np.sum(m[:-1, :] & m[1:, :])
    perimeter = 4.0 * area - 2.0 * float(horiz + vert)
    corrected = perimeter * np.pi / 4.0
    circularity = 4.0 * np.pi * area / corrected ** 2 if corrected > 0 else 1.0

    coords = np.argwhere(m).astype(np.float64)
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / coords.shape[0]
    eigvals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    major = 4.0 * np.sqrt(eigvals[0])
    minor = 4.0 * np.sqrt(eigvals[1])
    elongation = float(np.sqrt(eigvals[1] / eigvals[0])) if eigvals[0] > 0 else 1.0

    inner = np.zeros_like(m)
    inner[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1]
                         & m[1:-1, :-2] & m[1:-1, 2:])
    boundary = np.argwhere(m & ~inner).astype(np.float64)
    if boundary.shape[0] > 1:
        diffs = boundary[:, None, :] - boundary[None, :, :]
        max_diam = float(np.sqrt((diffs ** 2).sum(axis=2).max()))
    else:
        max_diam = 0.0

    return {
        "Area": area,
        "Perimeter": perimeter,
        "PerimeterToArea": perimeter / area,
        "Circularity": float(circularity),
        "MajorAxisLength": float(major),
        "MinorAxisLength": float(minor),
        "Elongation": elongation,
        "MaximumDiameter": max_diam,
    }


# ---------------------------------------------------------------------------
# co-occurrence
# ---------------------------------------------------------------------------

GLCM_NAMES = (
    "Contrast", "Correlation", "JointEnergy", "JointEntropy", "Idm", "Idmn",
    "Id", "Idn", "InverseVariance", "Dissimilarity", "ClusterShade",
    "ClusterProminence", "ClusterTendency", "Autocorrelation", "JointAverage",
    "SumSquares", "MaximumProbability",
)


def glcm_matrix(q: QuantizedImage, offsets=GLCM_OFFSETS) -> np.ndarray:
    """Symmetric co-occurrence probabilities averaged over the offsets."""
    mats = []
    for dr, dc in offsets:
        counts = kernels.glcm_counts(q.levels, q.mask, q.n_levels, dr, dc)
        counts = counts + counts.T
        total = counts.sum()
        if total > 0:
            mats.append(counts / total)
    if not mats:
        raise ValueError("no valid co-occurrence pairs inside the ROI")
    return np.mean(mats, axis=0)


def glcm_features(q: QuantizedImage, offsets=GLCM_OFFSETS) -> dict[str, float]:
    p = glcm_matrix(q, offsets)
    ng = q.n_levels
    i = np.arange(1, ng + 1, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")
    px = p.sum(axis=1)
    mu_x = float(np.sum(i * px))
    mu_y = mu_x  # symmetric matrix
    sig_x = float(np.sqrt(np.sum((i - mu_x) ** 2 * px)))
    diff = ii - jj
    summ = ii + jj - mu_x - mu_y
    nz = p[p > 0]
    corr_num = float(np.sum(ii * jj * p)) - mu_x * mu_y
    correlation = corr_num / (sig_x * sig_x) if sig_x > 0 else 1.0
    off_diag = diff != 0
    return {
        "Contrast": float(np.sum(diff ** 2 * p)),
        "Correlation": float(correlation),
        "JointEnergy": float(np.sum(p ** 2)),
        "JointEntropy": float(-np.sum(nz * np.log(nz))),
        "Idm": float(np.sum(p / (1.0 + diff ** 2))),
        "Idmn": float(np.sum(p / (1.0 + (diff / ng) ** 2))),
        "Id": float(np.sum(p / (1.0 + np.abs(diff)))),
        "Idn": float(np.sum(p / (1.0 + np.abs(diff) / ng))),
        "InverseVariance": float(np.sum(p[off_diag] / diff[off_diag] ** 2)),
        "Dissimilarity": float(np.sum(np.abs(diff) * p)),
        "ClusterShade": float(np.sum(summ ** 3 * p)),
        "ClusterProminence": float(np.sum(summ ** 4 * p)),
        "ClusterTendency": float(np.sum(summ ** 2 * p)),
        "Autocorrelation": float(np.sum(ii * jj * p)),
        "JointAverage": mu_x,
        "SumSquares": float(np.sum((ii - mu_x) ** 2 * p)),
        "MaximumProbability": float(p.max()),
    }


# ---------------------------------------------------------------------------
# run length
# ---------------------------------------------------------------------------

GLRLM_NAMES = (
    "ShortRunEmphasis", "LongRunEmphasis", "GrayLevelNonUniformity",
    "RunLengthNonUniformity", "RunPercentage", "GrayLevelVariance",
    "RunLengthVariance", "RunEntropy", "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
)


def glrlm_matrix(q: QuantizedImage, direction: tuple[int, int]) -> np.ndarray:
    max_run = max(q.levels.shape)
    return kernels.glrlm_counts(q.levels, q.mask, q.n_levels,
                                direction[0], direction[1], max_run)


def _glrlm_one(r: np.ndarray, n_pixels: int) -> dict[str, float]:
    n_runs = r.sum()
    p = r / n_runs
    g = np.arange(1, r.shape[0] + 1, dtype=np.float64)[:, None]
    length = np.arange(1, r.shape[1] + 1, dtype=np.float64)[None, :]
    mu_g = float(np.sum(p * g))
    mu_l = float(np.sum(p * length))
    nz = p[p > 0]
    return {
        "ShortRunEmphasis": float(np.sum(r / length ** 2) / n_runs),
        "LongRunEmphasis": float(np.sum(r * length ** 2) / n_runs),
        "GrayLevelNonUniformity": float(np.sum(r.sum(axis=1) ** 2) / n_runs),
        "RunLengthNonUniformity": float(np.sum(r.sum(axis=0) ** 2) / n_runs),
        "RunPercentage": float(n_runs / n_pixels),
        "GrayLevelVariance": float(np.sum(p * (g - mu_g) ** 2)),
        "RunLengthVariance": float(np.sum(p * (length - mu_l) ** 2)),
        "RunEntropy": float(-np.sum(nz * np.log(nz))),
        "LowGrayLevelRunEmphasis": float(np.sum(p / g ** 2)),
        "HighGrayLevelRunEmphasis": float(np.sum(p * g ** 2)),
    }


def glrlm_features(q: QuantizedImage, directions=RUN_DIRECTIONS) -> dict[str, float]:
    """Run-length features computed per direction, then averaged."""
    n_pixels = int(q.mask.sum())
    per_dir = [_glrlm_one(glrlm_matrix(q, d), n_pixels) for d in directions]
    return {name: float(np.mean([f[name] for f in per_dir])) for name in GLRLM_NAMES}


# ---------------------------------------------------------------------------
# size zone
# ---------------------------------------------------------------------------

GLSZM_NAMES = (
    "SmallZoneEmphasis", "LargeZoneEmphasis", "GrayLevelNonUniformity",
    "SizeZoneNonUniformity", "ZonePercentage", "ZoneEntropy",
    "GrayLevelVariance", "ZoneVariance", "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis",
)


def zone_list(q: QuantizedImage) -> list[tuple[int, int]]:
    """(gray level, size) of every 8-connected constant-level zone."""
    labels = kernels.zone_labels(q.levels, q.mask)
    n = labels.max()
    if n == 0:
        raise ValueError("empty ROI")
    flat_labels = labels.ravel()
    sizes = np.bincount(flat_labels, minlength=n + 1)[1:]
    labs, first = np.unique(flat_labels, return_index=True)
    keep = labs > 0
    level_of = np.zeros(n + 1, dtype=np.int64)
    level_of[labs[keep]] = q.levels.ravel()[first[keep]]
    return [(int(level_of[lab]), int(sizes[lab - 1])) for lab in range(1, n + 1)]


def glszm_features(q: QuantizedImage) -> dict[str, float]:
    zones = zone_list(q)
    n_zones = len(zones)
    n_pixels = int(q.mask.sum())
    g = np.array([z[0] for z in zones], dtype=np.float64)
    s = np.array([z[1] for z in zones], dtype=np.float64)
    mu_g = g.mean()
    mu_s = s.mean()
    level_counts = np.bincount(g.astype(np.int64))
    size_counts = np.bincount(s.astype(np.int64))
    pair_counts: dict[tuple[int, int], int] = {}
    for z in zones:
        pair_counts[z] = pair_counts.get(z, 0) + 1
    pz = np.array(list(pair_counts.values()), dtype=np.float64) / n_zones
    return {
        "SmallZoneEmphasis": float(np.mean(1.0 / s ** 2)),
        "LargeZoneEmphasis": float(np.mean(s ** 2)),
        "GrayLevelNonUniformity": float(np.sum(level_counts.astype(np.float64) ** 2) / n_zones),
        "SizeZoneNonUniformity": float(np.sum(size_counts.astype(np.float64) ** 2) / n_zones),
        "ZonePercentage": float(n_zones / n_pixels),
        "ZoneEntropy": float(-np.sum(pz * np.log(pz))),
        "GrayLevelVariance": float(np.mean((g - mu_g) ** 2)),
        "ZoneVariance": float(np.mean((s - mu_s) ** 2)),
        "LowGrayLevelZoneEmphasis": float(np.mean(1.0 / g ** 2)),
        "HighGrayLevelZoneEmphasis": float(np.mean(g ** 2)),
    }


# ---------------------------------------------------------------------------
# full extraction
# ---------------------------------------------------------------------------

def filter_images(image: np.ndarray, cfg: RadiomicsConfig) -> dict[str, np.ndarray]:
    """Ordered map of filter name to filtered image."""
    image = np.asarray(image, dtype=np.float64)
    out: dict[str, np.ndarray] = {"original": image}
    out.update(filter_wavelet(image))
    for sigma in cfg.log_sigmas_mm:
        out[log_filter_name(sigma)] = filter_log(image, sigma, cfg.spacing_mm)
    return out


def feature_names(cfg: RadiomicsConfig = RadiomicsConfig()) -> list[str]:
    """Deterministic full feature-name list for the configuration."""
    names = [f"original_shape2d_{n}" for n in SHAPE_NAMES]
    filters = ["original", "wavelet-L", "wavelet-LH", "wavelet-HL", "wavelet-H"]
    filters += [log_filter_name(s) for s in cfg.log_sigmas_mm]
    for filt in filters:
        names += [f"{filt}_firstorder_{n}" for n in FIRST_ORDER_NAMES]
        names += [f"{filt}_glcm_{n}" for n in GLCM_NAMES]
        names += [f"{filt}_glrlm_{n}" for n in GLRLM_NAMES]
        names += [f"{filt}_glszm_{n}" for n in GLSZM_NAMES]
    return names


def extract_all(image: np.ndarray, mask: np.ndarray,
                cfg: RadiomicsConfig = RadiomicsConfig()) -> dict[str, float]:
    """The full named feature vector for one case.

    Shape features are computed once from the mask; intensity and texture
    families run on every filter image. Output ordering matches
    feature_names(cfg) exactly.
    """
    mask = (np.asarray(mask) > 0).astype(np.uint8)
    out: dict[str, float] = {}
    for name, value in shape2d(mask).items():
        out[f"original_shape2d_{name}"] = value
    for filt, img in filter_images(image, cfg).items():
        fo = first_order(img, mask, cfg.n_levels)
        for name in FIRST_ORDER_NAMES:
            out[f"{filt}_firstorder_{name}"] = fo[name]
        q = quantize(img, mask, cfg.n_levels)
        for name, value in glcm_features(q).items():
            out[f"{filt}_glcm_{name}"] = value
        for name, value in glrlm_features(q).items():
            out[f"{filt}_glrlm_{name}"] = value
        for name, value in glszm_features(q).items():
            out[f"{filt}_glszm_{name}"] = value
    return out
