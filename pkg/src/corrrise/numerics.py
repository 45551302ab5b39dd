"""Array conventions and the statistical primitives used by every other module.

Images are ``(H, W, C)`` float arrays in [0, 1] with C in {1, 3}. Masks are
``(H, W)`` arrays in [0, 1]. Saliency maps are ``(H, W)`` float arrays in
[-1, 1]. All accumulation happens in float64.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError, DegenerateInputError


def as_image(img):
    """Validate and return an image as a float64 (H, W, C) array.

    A 2-D array is promoted to a single channel image.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ContractError(f"image must be (H, W, 1|3), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError("image must be non-empty")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError("image values must be finite and within [0, 1]")
    return arr


def as_mask(m):
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError("mask values must be finite and within [0, 1]")
    return arr


def as_saliency(s):
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"saliency map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.abs(arr).max(initial=0.0) > 1.0:
        raise ContractError("saliency values must be finite and within [-1, 1]")
    return arr


def cosine_similarity(a, b):
    """Cosine of the angle between two embeddings.

    Raises DegenerateInputError when either vector has zero norm.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm embedding")
    c = float(np.dot(a / na, b / nb))
    return min(1.0, max(-1.0, c))


def pearson_correlation(x, y):
    """Sample Pearson coefficient; 0.0 when either series is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ContractError("pearson correlation needs at least 2 samples")
    if x.max() == x.min() or y.max() == y.min():
        return 0.0
    # centre and rescale first so that very small or very large inputs neither underflow nor overflow
    x = x - x.mean()
    x = x / np.abs(x).max()
    return float(_kernels.pixel_pearson_numpy(x[:, None], y)[0])


def pixel_correlation(masks, scores):
    """Correlate every pixel's mask values with the score series.

    ``masks`` is an (N, H, W) stack, ``scores`` has length N. Returns an
    (H, W) map of Pearson coefficients.
    """
    masks = np.asarray(masks, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if masks.ndim != 3:
        raise ContractError(f"mask stack must be (N, H, W), got {masks.shape}")
    n, h, w = masks.shape
    if scores.size != n:
        raise ContractError(f"{n} masks but {scores.size} scores")
    if n < 2:
        raise ContractError("pearson correlation needs at least 2 samples")
    r = _kernels.pixel_pearson(masks.reshape(n, h * w), scores)
    return np.asarray(r).reshape(h, w)


def apply_mask(img, m):
    img = as_image(img)
    m = as_mask(m)
    if m.shape != img.shape[:2]:
        raise ContractError(f"mask {m.shape} does not match image {img.shape[:2]}")
    return img * m[:, :, None]


def auc_trapezoid(points):
    """Trapezoidal area under an accuracy curve, as a percentage.

    ``points`` is a sequence of ``(fraction, accuracy)`` pairs with fractions
    strictly increasing from 0 to 1.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ContractError("need at least two (fraction, accuracy) points")
    p, acc = pts[:, 0], pts[:, 1]
    if not (np.all(np.isfinite(pts))):
        raise ContractError("curve points must be finite")
    if p[0] != 0.0 or p[-1] != 1.0 or np.any(np.diff(p) <= 0):
        raise ContractError("fractions must increase strictly from 0 to 1")
    if acc.min() < 0.0 or acc.max() > 1.0:
        raise ContractError("accuracies must lie in [0, 1]")
    area = float(np.sum(np.diff(p) * (acc[1:] + acc[:-1]) * 0.5))
    return 100.0 * area


def split_signed(s):
    """Split a signed map into (positive, negative) parts; zeros go positive."""
    s = np.asarray(s, dtype=np.float64)
    pos = np.where(s >= 0, s, 0.0)
    neg = np.where(s < 0, s, 0.0)
    return pos, neg


@dataclass(frozen=True)
class EvalCurve:
    fractions: np.ndarray
    accuracies: np.ndarray
    auc_percent: float

    @classmethod
    def from_points(cls, fractions, accuracies):
        f = np.asarray(fractions, dtype=np.float64)
        a = np.asarray(accuracies, dtype=np.float64)
        return cls(f, a, auc_trapezoid(np.column_stack([f, a])))

    @property
    def points(self):
        return list(zip(self.fractions.tolist(), self.accuracies.tolist()))

    def accuracy_at(self, fraction):
        idx = np.flatnonzero(np.isclose(self.fractions, fraction, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"no curve point at fraction {fraction}")
        return float(self.accuracies[idx[0]])
