"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. The numba path is
used unless numba is missing or ``CORRRISE_DISABLE_NUMBA`` is set to a truthy
value before import. Both variants stay importable under explicit names so
tests and the benchmark can compare them directly.
"""

import os

import numpy as np

_DISABLED = os.environ.get("CORRRISE_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by CORRRISE_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False


# ---------------------------------------------------------------------------
# per-pixel Pearson correlation


def pixel_pearson_numpy(masks, scores):
    """Correlate each column of ``masks`` (N, P) with ``scores`` (N,)."""
    masks = np.asarray(masks, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    out = np.zeros(masks.shape[1], dtype=np.float64)
    if scores.max() == scores.min():
        return out
    dy = scores - scores.mean()
    dy /= np.abs(dy).max()  # r is scale-free; this keeps tiny series out of underflow
    syy = dy @ dy
    live = masks.max(axis=0) != masks.min(axis=0)
    if not live.any():
        return out
    cols = masks[:, live]
    dx = cols - cols.mean(axis=0)
    sxy = dy @ dx
    sxx = np.einsum("ij,ij->j", dx, dx)
    r = sxy / (np.sqrt(sxx) * np.sqrt(syy))
    out[live] = np.clip(r, -1.0, 1.0)
    return out


def _pixel_pearson_loop(masks, scores):
    n, p = masks.shape
    out = np.zeros(p, dtype=np.float64)
    ymin = scores[0]
    ymax = scores[0]
    ysum = 0.0
    for k in range(n):
        y = scores[k]
        ysum += y
        if y < ymin:
            ymin = y
        if y > ymax:
            ymax = y
    if ymin == ymax:
        return out
    ymean = ysum / n
    yscale = 0.0
    for k in range(n):
        d = abs(scores[k] - ymean)
        if d > yscale:
            yscale = d
    dy = np.empty(n)
    syy = 0.0
    for k in range(n):
        dy[k] = (scores[k] - ymean) / yscale
        syy += dy[k] * dy[k]
    for j in range(p):
        xmin = masks[0, j]
        xmax = masks[0, j]
        xsum = 0.0
        for k in range(n):
            x = masks[k, j]
            xsum += x
            if x < xmin:
                xmin = x
            if x > xmax:
                xmax = x
        if xmin == xmax:
            continue
        xmean = xsum / n
        sxx = 0.0
        sxy = 0.0
        for k in range(n):
            dx = masks[k, j] - xmean
            sxx += dx * dx
            sxy += dx * dy[k]
        r = sxy / (np.sqrt(sxx) * np.sqrt(syy))
        if r > 1.0:
            r = 1.0
        elif r < -1.0:
            r = -1.0
        out[j] = r
    return out


# ---------------------------------------------------------------------------
# patch rasterisation (max-merge of constant squares onto a zero canvas)


def rasterize_patches_numpy(rows, cols, values, size, height, width):
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    values = np.asarray(values, dtype=np.float64)
    n, k = rows.shape
    out = np.zeros((n, height, width), dtype=np.float64)
    for i in range(n):
        canvas = out[i]
        for j in range(k):
            r, c = rows[i, j], cols[i, j]
            block = canvas[r:r + size, c:c + size]
            np.maximum(block, values[i, j], out=block)
    return out


def _rasterize_patches_loop(rows, cols, values, size, height, width):
    n, k = rows.shape
    out = np.zeros((n, height, width), dtype=np.float64)
    for i in range(n):
        for j in range(k):
            r0 = rows[i, j]
            c0 = cols[i, j]
            v = values[i, j]
            for r in range(r0, r0 + size):
                for c in range(c0, c0 + size):
                    if v > out[i, r, c]:
                        out[i, r, c] = v
    return out


if NUMBA_AVAILABLE:
    pixel_pearson_numba = njit(cache=False, nogil=True)(_pixel_pearson_loop)
    _rasterize_numba = njit(cache=False, nogil=True)(_rasterize_patches_loop)

    def rasterize_patches_numba(rows, cols, values, size, height, width):
        return _rasterize_numba(
            np.ascontiguousarray(rows, dtype=np.int64),
            np.ascontiguousarray(cols, dtype=np.int64),
            np.ascontiguousarray(values, dtype=np.float64),
            int(size), int(height), int(width),
        )

    def pixel_pearson(masks, scores):
        return pixel_pearson_numba(
            np.ascontiguousarray(masks, dtype=np.float64),
            np.ascontiguousarray(scores, dtype=np.float64),
        )

    rasterize_patches = rasterize_patches_numba
else:
    pixel_pearson_numba = None
    rasterize_patches_numba = None
    pixel_pearson = pixel_pearson_numpy
    rasterize_patches = rasterize_patches_numpy


def active_backend():
    return "numba" if NUMBA_AVAILABLE else "numpy"
