"""Hot numeric kernels with two interchangeable backends.

Every kernel has a numba ``@njit`` implementation (default) and a
vectorized numpy/scipy fallback. Set ``LESIONKIT_NO_NUMBA=1`` to select
the fallback path; ``benchmarks/bench_kernels.py`` times both. The two
backends are exact alternatives: they produce identical results up to
floating-point summation order.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

_ENV_FLAG = os.environ.get("LESIONKIT_NO_NUMBA", "").strip().lower()
USE_NUMBA = _ENV_FLAG not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy / scipy fallback implementations
# ---------------------------------------------------------------------------

_STRUCT_8 = np.ones((3, 3), dtype=np.uint8)
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)


def _label_components_np(mask, eight=True):
    structure = _STRUCT_8 if eight else _STRUCT_4
    labels, _ = ndimage.label(mask, structure=structure)
    return labels.astype(np.int32)


def _zone_labels_np(levels, roi):
    # 8-connected zones of equal gray level inside the ROI; zone identity is
    # the multiset of (level, size) pairs, so per-level labeling is enough.
    out = np.zeros(levels.shape, dtype=np.int32)
    next_label = 0
    for g in np.unique(levels[roi > 0]):
        sub, n = ndimage.label((levels == g) & (roi > 0), structure=_STRUCT_8)
        out[sub > 0] = sub[sub > 0] + next_label
        next_label += n
    return out


def _glcm_counts_np(levels, roi, ng, dr, dc):
    h, w = levels.shape
    counts = np.zeros((ng, ng), dtype=np.float64)
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    a = levels[r0:r1, c0:c1]
    b = levels[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    valid = (roi[r0:r1, c0:c1] > 0) & (roi[r0 + dr:r1 + dr, c0 + dc:c1 + dc] > 0)
    np.add.at(counts, (a[valid] - 1, b[valid] - 1), 1.0)
    return counts


def _rle_line(vals, counts):
    # vals: 1-d int line with 0 marking out-of-ROI gaps; levels are >= 1
    n = vals.size
    i = 0
    while i < n:
        if vals[i] == 0:
            i += 1
            continue
        j = i + 1
        while j < n and vals[j] == vals[i]:
            j += 1
        counts[vals[i] - 1, j - i - 1] += 1.0
        i = j


def _glrlm_counts_np(levels, roi, ng, dr, dc, max_run):
    counts = np.zeros((ng, max_run), dtype=np.float64)
    masked = np.where(roi > 0, levels, 0)
    if (dr, dc) == (0, 1):
        lines = list(masked)
    elif (dr, dc) == (1, 0):
        lines = list(masked.T)
    elif (dr, dc) == (1, 1):
        h, w = masked.shape
        lines = [np.diagonal(masked, k) for k in range(-(h - 1), w)]
    elif (dr, dc) == (1, -1):
        flipped = masked[:, ::-1]
        h, w = flipped.shape
        lines = [np.diagonal(flipped, k) for k in range(-(h - 1), w)]
    else:
        raise ValueError(f"unsupported run direction ({dr},{dc})")
    for line in lines:
        _rle_line(np.ascontiguousarray(line), counts)
    return counts


def _conv2d_dilated_np(x, weights, bias, dilation):
    cout, cin, kh, kw = weights.shape
    eh, ew = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    ph, pw = eh // 2, ew // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (eh, ew), axis=(1, 2))[:, :, :, ::dilation, ::dilation]
    out = np.einsum("ihwkl,oikl->ohw", win, weights, optimize=True)
    return out + bias[:, None, None]


def _correlate_rows_valid_np(x, k):
    win = sliding_window_view(x, k.size, axis=1)
    return win @ k


def _lasso_mfista_np(X, y, lam, w0, b0, step, max_iter, obj_tol, kkt_tol):
    n = y.size
    x_w, x_b = w0.copy(), b0
    mx = X @ x_w
    y_w, y_b, my = x_w.copy(), x_b, mx.copy()
    t = 1.0

    def objective(margin, w):
        return float(np.mean(np.logaddexp(0.0, margin) - y * margin)) \
            + lam * float(np.abs(w).sum())

    def sig(z):
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out

    obj = objective(mx + x_b, x_w)
    history = np.empty(max_iter)
    n_hist = 0
    for _ in range(max_iter):
        resid = sig(my + y_b) - y
        g_w = X.T @ resid / n
        g_b = float(resid.mean())
        v = y_w - step * g_w
        z_w = np.sign(v) * np.maximum(np.abs(v) - step * lam, 0.0)
        z_b = y_b - step * g_b
        mz = X @ z_w
        obj_z = objective(mz + z_b, z_w)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if obj_z <= obj:
            new_w, new_b, mnew, new_obj = z_w, z_b, mz, obj_z
        else:
            new_w, new_b, mnew, new_obj = x_w, x_b, mx, obj
        a1, a2 = t / t_next, (t - 1.0) / t_next
        y_w = new_w + a1 * (z_w - new_w) + a2 * (new_w - x_w)
        y_b = new_b + a1 * (z_b - new_b) + a2 * (new_b - x_b)
        my = mnew + a1 * (mz - mnew) + a2 * (mnew - mx)
        decrease = obj - new_obj
        x_w, x_b, mx, obj = new_w, new_b, mnew, new_obj
        t = t_next
        history[n_hist] = obj
        n_hist += 1
        if decrease < obj_tol:
            r = sig(mx + x_b) - y
            g = X.T @ r / n
            viol = np.where(x_w == 0.0, np.maximum(np.abs(g) - lam, 0.0),
                            np.abs(g + lam * np.sign(x_w)))
            if max(float(viol.max(initial=0.0)), abs(float(r.mean()))) < kkt_tol:
                break
    return x_w, x_b, obj, history[:n_hist]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True)
    def _label_components_nb(mask, eight=True):
        h, w = mask.shape
        labels = np.zeros((h, w), dtype=np.int32)
        stack = np.empty((h * w, 2), dtype=np.int32)
        current = 0
        for r in range(h):
            for c in range(w):
                if mask[r, c] == 0 or labels[r, c] != 0:
                    continue
                current += 1
                labels[r, c] = current
                stack[0, 0] = r
                stack[0, 1] = c
                top = 1
                while top > 0:
                    top -= 1
                    rr = stack[top, 0]
                    cc = stack[top, 1]
                    for dr in range(-1, 2):
                        for dc in range(-1, 2):
                            if dr == 0 and dc == 0:
                                continue
                            if not eight and dr != 0 and dc != 0:
                                continue
                            nr = rr + dr
                            nc = cc + dc
                            if 0 <= nr < h and 0 <= nc < w:
                                if mask[nr, nc] != 0 and labels[nr, nc] == 0:
                                    labels[nr, nc] = current
                                    stack[top, 0] = nr
                                    stack[top, 1] = nc
                                    top += 1
        return labels

    @njit(cache=True)
    def _zone_labels_nb(levels, roi):
        h, w = levels.shape
        labels = np.zeros((h, w), dtype=np.int32)
        stack = np.empty((h * w, 2), dtype=np.int32)
        current = 0
        for r in range(h):
            for c in range(w):
                if roi[r, c] == 0 or labels[r, c] != 0:
                    continue
                current += 1
                g = levels[r, c]
                labels[r, c] = current
                stack[0, 0] = r
                stack[0, 1] = c
                top = 1
                while top > 0:
                    top -= 1
                    rr = stack[top, 0]
                    cc = stack[top, 1]
                    for dr in range(-1, 2):
                        for dc in range(-1, 2):
                            if dr == 0 and dc == 0:
                                continue
                            nr = rr + dr
                            nc = cc + dc
                            if 0 <= nr < h and 0 <= nc < w:
                                if roi[nr, nc] != 0 and labels[nr, nc] == 0 and levels[nr, nc] == g:
                                    labels[nr, nc] = current
                                    stack[top, 0] = nr
                                    stack[top, 1] = nc
                                    top += 1
        return labels

    @njit(cache=True)
    def _glcm_counts_nb(levels, roi, ng, dr, dc):
        h, w = levels.shape
        counts = np.zeros((ng, ng), dtype=np.float64)
        for r in range(h):
            for c in range(w):
                if roi[r, c] == 0:
                    continue
                nr = r + dr
                nc = c + dc
                if 0 <= nr < h and 0 <= nc < w and roi[nr, nc] != 0:
                    counts[levels[r, c] - 1, levels[nr, nc] - 1] += 1.0
        return counts

    @njit(cache=True)
    def _glrlm_counts_nb(levels, roi, ng, dr, dc, max_run):
        h, w = levels.shape
        counts = np.zeros((ng, max_run), dtype=np.float64)
        for r in range(h):
            for c in range(w):
                # start of a line only if the previous cell is off-grid
                pr = r - dr
                pc = c - dc
                if 0 <= pr < h and 0 <= pc < w:
                    continue
                rr = r
                cc = c
                run_level = 0
                run_len = 0
                while 0 <= rr < h and 0 <= cc < w:
                    v = levels[rr, cc] if roi[rr, cc] != 0 else 0
                    if v == run_level:
                        if v != 0:
                            run_len += 1
                    else:
                        if run_level != 0:
                            counts[run_level - 1, run_len - 1] += 1.0
                        run_level = v
                        run_len = 1 if v != 0 else 0
                    rr += dr
                    cc += dc
                if run_level != 0:
                    counts[run_level - 1, run_len - 1] += 1.0
        return counts

    @njit(cache=True)
    def _conv2d_dilated_nb(x, weights, bias, dilation):
        cin, h, w = x.shape
        cout, _, kh, kw = weights.shape
        ph = ((kh - 1) * dilation + 1) // 2
        pw = ((kw - 1) * dilation + 1) // 2
        out = np.empty((cout, h, w), dtype=np.float64)
        for o in range(cout):
            for r in range(h):
                for c in range(w):
                    acc = bias[o]
                    for i in range(cin):
                        for u in range(kh):
                            rr = r + u * dilation - ph
                            if rr < 0 or rr >= h:
                                continue
                            for v in range(kw):
                                cc = c + v * dilation - pw
                                if 0 <= cc < w:
                                    acc += x[i, rr, cc] * weights[o, i, u, v]
                    out[o, r, c] = acc
        return out

    @njit(cache=True)
    def _correlate_rows_valid_nb(x, k):
        h, w = x.shape
        m = k.size
        out = np.empty((h, w - m + 1), dtype=np.float64)
        for r in range(h):
            for c in range(w - m + 1):
                acc = 0.0
                for j in range(m):
                    acc += x[r, c + j] * k[j]
                out[r, c] = acc
        return out

    @njit(cache=True)
    def _lasso_mfista_nb(X, y, lam, w0, b0, step, max_iter, obj_tol, kkt_tol):
        n, d = X.shape
        x_w = w0.copy()
        x_b = b0
        mx = X @ x_w
        y_w = x_w.copy()
        y_b = x_b
        my = mx.copy()
        t = 1.0

        obj = 0.0
        for i in range(n):
            z = mx[i] + x_b
            m = z if z > 0.0 else 0.0
            obj += m + np.log1p(np.exp(z - m) if z <= 0.0 else np.exp(-z)) - y[i] * z
        obj = obj / n + lam * np.abs(x_w).sum()

        history = np.empty(max_iter)
        n_hist = 0
        resid = np.empty(n)
        for _ in range(max_iter):
            g_b = 0.0
            for i in range(n):
                z = my[i] + y_b
                if z >= 0.0:
                    p = 1.0 / (1.0 + np.exp(-z))
                else:
                    ez = np.exp(z)
                    p = ez / (1.0 + ez)
                resid[i] = p - y[i]
                g_b += resid[i]
            g_b /= n
            g_w = X.T @ resid / n
            z_w = np.empty(d)
            for j in range(d):
                v = y_w[j] - step * g_w[j]
                a = abs(v) - step * lam
                z_w[j] = (1.0 if v > 0.0 else -1.0) * a if a > 0.0 else 0.0
            z_b = y_b - step * g_b
            mz = X @ z_w
            obj_z = 0.0
            for i in range(n):
                z = mz[i] + z_b
                m = z if z > 0.0 else 0.0
                obj_z += m + np.log1p(np.exp(z - m) if z <= 0.0 else np.exp(-z)) - y[i] * z
            obj_z = obj_z / n + lam * np.abs(z_w).sum()

            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            if obj_z <= obj:
                new_w, new_b, mnew, new_obj = z_w, z_b, mz, obj_z
            else:
                new_w, new_b, mnew, new_obj = x_w, x_b, mx, obj
            a1 = t / t_next
            a2 = (t - 1.0) / t_next
            y_w = new_w + a1 * (z_w - new_w) + a2 * (new_w - x_w)
            y_b = new_b + a1 * (z_b - new_b) + a2 * (new_b - x_b)
            my = mnew + a1 * (mz - mnew) + a2 * (mnew - mx)
            decrease = obj - new_obj
            x_w, x_b, mx, obj = new_w, new_b, mnew, new_obj
            t = t_next
            history[n_hist] = obj
            n_hist += 1
            if decrease < obj_tol:
                g_b2 = 0.0
                for i in range(n):
                    z = mx[i] + x_b
                    if z >= 0.0:
                        p = 1.0 / (1.0 + np.exp(-z))
                    else:
                        ez = np.exp(z)
                        p = ez / (1.0 + ez)
                    resid[i] = p - y[i]
                    g_b2 += resid[i]
                g_b2 /= n
                g = X.T @ resid / n
                viol = abs(g_b2)
                for j in range(d):
                    if x_w[j] == 0.0:
                        v = abs(g[j]) - lam
                        if v > viol:
                            viol = v
                    else:
                        v = abs(g[j] + lam * (1.0 if x_w[j] > 0.0 else -1.0))
                        if v > viol:
                            viol = v
                if viol < kkt_tol:
                    break
        return x_w, x_b, obj, history[:n_hist]


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

NUMPY_IMPLS = {
    "label_components": _label_components_np,
    "zone_labels": _zone_labels_np,
    "glcm_counts": _glcm_counts_np,
    "glrlm_counts": _glrlm_counts_np,
    "conv2d_dilated": _conv2d_dilated_np,
    "correlate_rows_valid": _correlate_rows_valid_np,
    "lasso_mfista": _lasso_mfista_np,
}

NUMBA_IMPLS = None
if USE_NUMBA:
    NUMBA_IMPLS = {
        "label_components": _label_components_nb,
        "zone_labels": _zone_labels_nb,
        "glcm_counts": _glcm_counts_nb,
        "glrlm_counts": _glrlm_counts_nb,
        "conv2d_dilated": _conv2d_dilated_nb,
        "correlate_rows_valid": _correlate_rows_valid_nb,
        "lasso_mfista": _lasso_mfista_nb,
    }

_ACTIVE = NUMBA_IMPLS if USE_NUMBA else NUMPY_IMPLS

label_components = _ACTIVE["label_components"]
zone_labels = _ACTIVE["zone_labels"]
glcm_counts = _ACTIVE["glcm_counts"]
glrlm_counts = _ACTIVE["glrlm_counts"]
conv2d_dilated = _ACTIVE["conv2d_dilated"]
correlate_rows_valid = _ACTIVE["correlate_rows_valid"]
lasso_mfista = _ACTIVE["lasso_mfista"]

BACKEND = "numba" if USE_NUMBA else "numpy"
