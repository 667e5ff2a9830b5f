"""Three-stage feature selection, fit on the training split only.

Variance filtering plus z-score standardization, greedy
relevance-minus-redundancy ranking (mutual information against the
label, mean absolute Pearson correlation against already-picked
features), and L1-regularized logistic regression solved by proximal
gradient descent with soft-thresholding, its regularization strength
chosen by stratified cross-validation. The fitted model is frozen and
re-applies itself bit-exactly by column name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .aggregation import sigmoid


@dataclass(frozen=True)
class FeatureMatrix:
    names: tuple[str, ...]
    values: np.ndarray              # [N, F]
    labels: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise ValueError("values must be [N, len(names)]")
        if np.isnan(values).any():
            raise ValueError("feature matrix contains NaN")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.intp)
            if labels.shape != (values.shape[0],) or not np.isin(labels, (0, 1)).all():
                raise ValueError("labels must be one binary value per row")
            object.__setattr__(self, "labels", labels)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def take(self, names) -> "FeatureMatrix":
        lookup = {n: i for i, n in enumerate(self.names)}
        idx = [lookup[n] for n in names]
        return FeatureMatrix(tuple(names), self.values[:, idx], self.labels)


@dataclass(frozen=True)
class SelectionConfig:
    variance_tau: float = 1e-8
    mrmr_k: int = 128
    mi_bins: int = 16
    folds: int = 5
    n_lambdas: int = 50
    lambda_min_ratio: float = 1e-4
    lambda_rule: str = "1se"   # "1se" (parsimonious) or "min" (raw CV argmin)
    seed: int = 0

    def __post_init__(self):
        if self.lambda_rule not in ("1se", "min"):
            raise ValueError("lambda_rule must be '1se' or 'min'")


def variance_filter(values: np.ndarray, tau: float) -> np.ndarray:
    """Boolean keep-mask: population variance strictly above tau."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return np.asarray(values, dtype=np.float64).var(axis=0) > tau


def zscore_fit(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column training mean and population standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean(axis=0)
    sigma = values.std(axis=0)
    if np.any(sigma == 0.0):
        raise ValueError("zero-variance column reached standardization")
    return mu, sigma


def zscore_apply(values: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - mu) / sigma


def mutual_information(x: np.ndarray, y: np.ndarray, bins: int = 16) -> float:
    """I(X;Y) in nats from an equal-width histogram of x against binary y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if x.size < 4:
        raise ValueError("need at least 4 samples")
    if np.unique(y).size < 2:
        raise ValueError("labels are single-class")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return 0.0
    width = (hi - lo) / bins
    bx = np.clip(np.floor((x - lo) / width).astype(np.intp), 0, bins - 1)
    joint = np.bincount(bx * 2 + y, minlength=bins * 2).astype(np.float64).reshape(bins, 2)
    p = joint / joint.sum()
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (px @ py)[nz])))


def _abs_pearson_vs_all(values: np.ndarray, col: int) -> np.ndarray:
    centered = values - values.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    ref = centered[:, col]
    ref_norm = norms[col]
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = centered.T @ ref / (norms * ref_norm)
    rho[~np.isfinite(rho)] = 0.0
    return np.abs(rho)


def mrmr_select(values: np.ndarray, y: np.ndarray, k: int, bins: int = 16) -> list[int]:
    """Greedy relevance-minus-redundancy column ranking.

    First pick maximizes mutual information with the label; each later
    pick maximizes MI minus the mean |Pearson rho| against the already
    selected columns. Ties break to the lower column index.
    """
    values = np.asarray(values, dtype=np.float64)
    n_features = values.shape[1]
    if k > n_features:
        raise ValueError(f"k={k} exceeds feature count {n_features}")
    relevance = np.array([mutual_information(values[:, j], y, bins) for j in range(n_features)])
    selected = [int(np.argmax(relevance))]
    red_sum = np.zeros(n_features)
    available = np.ones(n_features, dtype=bool)
    available[selected[0]] = False
    while len(selected) < k:
        red_sum += _abs_pearson_vs_all(values, selected[-1])
        phi = relevance - red_sum / len(selected)
        phi[~available] = -np.inf
        nxt = int(np.argmax(phi))
        selected.append(nxt)
        available[nxt] = False
    return selected


# ---------------------------------------------------------------------------
# L1 logistic regression via proximal gradient
# ---------------------------------------------------------------------------

def _logistic_objective(X, y, w, b, lam):
    z = b + X @ w
    smooth = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return smooth + lam * float(np.abs(w).sum())


def _smooth_grad(X, y, w, b):
    p = sigmoid(b + X @ w)
    resid = p - y
    return X.T @ resid / y.size, float(resid.mean())

def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _lipschitz_step(X) -> float:
    a = np.concatenate([np.ones((X.shape[0], 1)), X], axis=1)
    gram = a.T @ a
    lmax = float(np.linalg.eigvalsh(gram)[-1])
    return 4.0 * X.shape[0] / lmax


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty that keeps every feature weight at exactly zero."""
    ybar = float(np.mean(y))
    g, _ = _smooth_grad(X, y, np.zeros(X.shape[1]), np.log(ybar / (1.0 - ybar)))
    return float(np.abs(g).max())


def kkt_violation(X, y, w, b, lam) -> float:
    """Max stationarity violation of the L1 objective at (w, b)."""
    g, gb = _smooth_grad(X, y, w, b)
    viol = np.where(w == 0.0,
                    np.maximum(np.abs(g) - lam, 0.0),
                    np.abs(g + lam * np.sign(w)))
    return max(float(viol.max(initial=0.0)), abs(gb))


def _ista(X, y, lam, w, b, step, max_iter=10000, obj_tol=1e-10, kkt_tol=1e-7,
          record=None):
    """Monotone accelerated proximal gradient; returns (w, b, objective).

    Each step is a plain soft-threshold proximal update evaluated at a
    momentum point; a candidate that would raise the objective is
    rejected, so accepted iterates are non-increasing. Terminates when
    the objective stalls below obj_tol and the stationarity conditions
    hold to kkt_tol, guaranteeing KKT at every returned solution. The
    inner loop is a hot kernel (numba by default, vectorized numpy via
    the env flag).
    """
    w_out, b_out, obj, history = kernels.lasso_mfista(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        float(lam), np.asarray(w, dtype=np.float64).copy(), float(b),
        float(step), int(max_iter), float(obj_tol), float(kkt_tol))
    if record is not None:
        record.extend(history.tolist())
    return w_out, b_out, obj


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    assignment = np.empty(y.size, dtype=np.intp)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assignment[idx] = np.arange(idx.size) % folds
    return assignment


def _val_logloss(X, y, w, b) -> float:
    z = b + X @ w
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


@dataclass(frozen=True)
class LassoFit:
    weights: np.ndarray
    intercept: float
    lambda_star: float
    lambda_grid: np.ndarray
    cv_loss: np.ndarray


CV_PATH_MAX_ITER = 600  # loose inner budget for instrumental CV-path fits


def lasso_fit(X: np.ndarray, y: np.ndarray, lambda_grid=None, folds: int = 5,
              seed: int = 0, n_lambdas: int = 50, lambda_min_ratio: float = 1e-4,
              lambda_rule: str = "1se") -> LassoFit:
    """Cross-validated L1 logistic regression.

    Expects standardized columns. The path is solved warm-started from
    large to small penalties. Under the default "1se" rule lambda* is
    the largest penalty whose mean validation log-loss stays within one
    standard error of the curve minimum; "min" takes the raw argmin
    (ties resolve to the larger, sparser penalty). The final model is
    refit on all rows at lambda* under the full iteration budget, so the
    returned solution carries the KKT guarantee. The per-fold path fits
    run under a looser iteration cap: they only rank penalties, and
    near-separable folds at vanishing penalties would otherwise burn the
    entire budget on solutions that are never returned.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(y).size < 2 or min(np.sum(y == 0), np.sum(y == 1)) < 2:
        raise ValueError("need at least two samples per class")
    col_var = X.var(axis=0)
    if np.any(col_var == 0.0):
        raise ValueError("input must be standardized (zero-variance column found)")
    if lambda_grid is None:
        lmax = lambda_max(X, y)
        lambda_grid = np.geomspace(lmax, lambda_min_ratio * lmax, n_lambdas)
    lambda_grid = np.sort(np.asarray(lambda_grid, dtype=np.float64))[::-1]

    # stratification cannot spread a class over more folds than it has samples
    folds = int(min(folds, np.sum(y == 0), np.sum(y == 1)))
    assignment = _stratified_folds(y.astype(np.intp), folds, seed)
    cv_loss = np.zeros((folds, lambda_grid.size))
    for fold in range(folds):
        train = assignment != fold
        # log-loss on a single-class validation slice is still well defined;
        # only a single-class training fold is fatal
        if np.unique(y[train]).size < 2:
            raise ValueError("single-class training fold; reduce fold count")
        Xt, yt = X[train], y[train]
        step = _lipschitz_step(Xt)
        w = np.zeros(X.shape[1])
        b = float(np.log(yt.mean() / (1.0 - yt.mean())))
        for li, lam in enumerate(lambda_grid):
            w, b, _ = _ista(Xt, yt, lam, w, b, step, max_iter=CV_PATH_MAX_ITER)
            cv_loss[fold, li] = _val_logloss(X[~train], y[~train], w, b)

    mean_loss = cv_loss.mean(axis=0)
    best = int(np.argmin(mean_loss))  # grid is descending, argmin favors larger lambda on ties
    if lambda_rule == "1se" and folds > 1:
        se = float(cv_loss[:, best].std(ddof=1) / np.sqrt(folds))
        best = int(np.argmax(mean_loss <= mean_loss[best] + se))
    lambda_star = float(lambda_grid[best])

    step = _lipschitz_step(X)
    w = np.zeros(X.shape[1])
    b = float(np.log(y.mean() / (1.0 - y.mean())))
    for lam in lambda_grid[:best + 1]:
        w, b, _ = _ista(X, y, lam, w, b, step)
    return LassoFit(w, b, lambda_star, lambda_grid, mean_loss)


# ---------------------------------------------------------------------------
# the frozen cascade
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionModel:
    all_names: tuple[str, ...]
    variance_tau: float
    keep_names: tuple[str, ...]
    mu: np.ndarray
    sigma: np.ndarray
    mrmr_names: tuple[str, ...]
    lasso_weights: np.ndarray
    intercept: float
    lambda_star: float
    selected_names: tuple[str, ...] = field(default=())

    def _check_schema(self, X: FeatureMatrix) -> None:
        if set(X.names) != set(self.all_names):
            missing = set(self.all_names) - set(X.names)
            extra = set(X.names) - set(self.all_names)
            raise ValueError(f"schema mismatch (missing={sorted(missing)[:3]}, "
                             f"extra={sorted(extra)[:3]})")

    def standardized(self, X: FeatureMatrix) -> FeatureMatrix:
        """Variance mask then z-score with the frozen training statistics."""
        self._check_schema(X)
        kept = X.take(self.keep_names)
        return FeatureMatrix(self.keep_names, zscore_apply(kept.values, self.mu, self.sigma),
                             X.labels)

    def transform(self, X: FeatureMatrix) -> FeatureMatrix:
        """Full reduction: variance mask, z-score, ranked columns, non-zero weights."""
        z = self.standardized(X).take(self.mrmr_names)
        return z.take(self.selected_names)

    def decision_function(self, X: FeatureMatrix) -> np.ndarray:
        """Logit of the radiomics branch for each row."""
        z = self.standardized(X).take(self.mrmr_names)
        return self.intercept + z.values @ self.lasso_weights

    def to_json(self, path) -> None:
        payload = {
            "all_names": list(self.all_names),
            "variance_tau": self.variance_tau,
            "keep_names": list(self.keep_names),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "mrmr_names": list(self.mrmr_names),
            "lasso_weights": self.lasso_weights.tolist(),
            "intercept": self.intercept,
            "lambda_star": self.lambda_star,
            "selected_names": list(self.selected_names),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "SelectionModel":
        with open(Path(path), encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            all_names=tuple(d["all_names"]),
            variance_tau=float(d["variance_tau"]),
            keep_names=tuple(d["keep_names"]),
            mu=np.array(d["mu"], dtype=np.float64),
            sigma=np.array(d["sigma"], dtype=np.float64),
            mrmr_names=tuple(d["mrmr_names"]),
            lasso_weights=np.array(d["lasso_weights"], dtype=np.float64),
            intercept=float(d["intercept"]),
            lambda_star=float(d["lambda_star"]),
            selected_names=tuple(d["selected_names"]),
        )


def fit_selection(train: FeatureMatrix, cfg: SelectionConfig = SelectionConfig()) -> SelectionModel:
    """Fit the full cascade on the training matrix."""
    if train.labels is None:
        raise ValueError("training matrix needs labels")
    if train.values.shape[0] < 4:
        raise ValueError("need at least 4 training rows")
    keep_mask = variance_filter(train.values, cfg.variance_tau)
    keep_names = tuple(n for n, k in zip(train.names, keep_mask) if k)
    if not keep_names:
        raise ValueError("variance filter removed every feature")
    kept = train.take(keep_names)
    mu, sigma = zscore_fit(kept.values)
    z = zscore_apply(kept.values, mu, sigma)

    k = min(cfg.mrmr_k, len(keep_names))
    order = mrmr_select(z, train.labels, k, cfg.mi_bins)
    mrmr_names = tuple(keep_names[j] for j in order)
    zr = z[:, order]

    fit = lasso_fit(zr, train.labels.astype(np.float64), folds=cfg.folds, seed=cfg.seed,
                    n_lambdas=cfg.n_lambdas, lambda_min_ratio=cfg.lambda_min_ratio,
                    lambda_rule=cfg.lambda_rule)
    selected = tuple(n for n, w in zip(mrmr_names, fit.weights) if w != 0.0)
    return SelectionModel(
        all_names=train.names,
        variance_tau=cfg.variance_tau,
        keep_names=keep_names,
        mu=mu,
        sigma=sigma,
        mrmr_names=mrmr_names,
        lasso_weights=fit.weights,
        intercept=fit.intercept,
        lambda_star=fit.lambda_star,
        selected_names=selected,
    )


def apply_pipeline(model: SelectionModel, X: FeatureMatrix) -> FeatureMatrix:
    """Reduce any matrix with the frozen model (name-keyed, leak-free)."""
    return model.transform(X)
