"""Deletion / Insertion evaluation of saliency methods on verification pairs.

Both images of every pair are modified at once, each according to its own
map. Deletion overwrites the top-ranked fraction of pixels with a constant
fill; insertion starts from a constant image and copies the top-ranked
fraction of original pixels back in. At every step the verification accuracy
of the (fixed-threshold) model is recorded; the curve's trapezoidal area,
in percent, is the score.
"""

import hashlib
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .explain import ExplainRequest, explain_pair
from .maskgen import MaskGenConfig
from .numerics import EvalCurve, as_image

MATCH = "match"
NONMATCH = "nonmatch"
LABELS = (MATCH, NONMATCH)


@dataclass
class LabeledPair:
    image_a: np.ndarray
    image_b: np.ndarray
    label: str = MATCH
    name: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ContractError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class EvalConfig:
    steps: int = 20
    threshold: float = None
    deletion_fill: float = 0.0
    insertion_base: float = 0.0
    ranking_source: str = "signed"

    def validate(self):
        if self.steps < 2:
            raise ConfigError("steps must be at least 2")
        if self.threshold is not None and not np.isfinite(self.threshold):
            raise ConfigError("threshold must be finite")
        for name in ("deletion_fill", "insertion_base"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.ranking_source not in ("signed", "positive-only"):
            raise ConfigError(f"unknown ranking_source {self.ranking_source!r}")
        return self

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# verification


def _unit_rows(emb):
    norms = np.linalg.norm(emb, axis=1)
    out = np.full_like(emb, np.nan)
    ok = norms > 0
    out[ok] = emb[ok] / norms[ok, None]
    return out


def pair_scores(backend, images_a, images_b):
    """Cosine similarity per pair; NaN where an embedding has zero norm."""
    if len(images_a) == 0:
        return np.zeros(0)
    ea = _unit_rows(np.asarray(backend.embed_stack(np.asarray(images_a)), dtype=np.float64))
    eb = _unit_rows(np.asarray(backend.embed_stack(np.asarray(images_b)), dtype=np.float64))
    return np.clip(np.einsum("ij,ij->i", ea, eb), -1.0, 1.0)


def decisions(scores, threshold):
    """True where the model accepts the pair. A NaN score is a rejection."""
    scores = np.asarray(scores, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.where(np.isnan(scores), False, scores >= threshold)


def _accuracy(scores, labels, threshold):
    truth = np.asarray([lab == MATCH for lab in labels])
    return float(np.mean(decisions(scores, threshold) == truth))


def verification_accuracy(backend, pairs, threshold):
    """Fraction of pairs whose thresholded decision agrees with the label."""
    if not pairs:
        raise ContractError("verification_accuracy needs at least one pair")
    scores = pair_scores(backend, [p.image_a for p in pairs], [p.image_b for p in pairs])
    return _accuracy(scores, [p.label for p in pairs], threshold)


def select_threshold(scores, labels):
    """Accuracy-maximising threshold, placed midway between adjacent scores.

    Ties go to the lowest such threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0 or not np.all(np.isfinite(scores)):
        raise ContractError("threshold selection needs finite scores")
    u = np.unique(scores)
    candidates = np.concatenate([[u[0] - 1e-6], (u[:-1] + u[1:]) / 2, [u[-1] + 1e-6]])
    accs = [_accuracy(scores, labels, t) for t in candidates]
    return float(candidates[int(np.argmax(accs))])


# ---------------------------------------------------------------------------
# ranking and perturbation


def rank_pixels(s, ranking_source="signed"):
    """Row-major pixel indices sorted by saliency, highest first.

    Ties keep row-major order. ``positive-only`` puts every negative pixel
    after all non-negative ones, each group still in descending order.
    """
    s = np.asarray(s, dtype=np.float64)
    flat = s.ravel()
    if ranking_source == "signed":
        return np.argsort(-flat, kind="stable")
    if ranking_source == "positive-only":
        neg = flat < 0
        return np.lexsort((np.arange(flat.size), -flat, neg))
    raise ConfigError(f"unknown ranking_source {ranking_source!r}")


def pixel_count(fraction_step, steps, total):
    """Pixels modified at step ``k`` of ``steps`` (round half up)."""
    return int(np.floor(fraction_step * total / steps + 0.5))


def delete_top(img, order, count, fill):
    out = np.array(img, dtype=np.float64, copy=True)
    h, w = out.shape[:2]
    flat = out.reshape(h * w, -1)
    flat[order[:count]] = fill
    return out


def insert_top(img, order, count, base):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    out = np.full_like(img, base)
    src = img.reshape(h * w, -1)
    dst = out.reshape(h * w, -1)
    idx = order[:count]
    dst[idx] = src[idx]
    return out


def _curve(backend, pairs, maps, cfg, mode):
    cfg.validate()
    if cfg.threshold is None:
        raise ConfigError("a fixed threshold is required for curve evaluation")
    if len(maps) != len(pairs):
        raise ContractError(f"{len(pairs)} pairs but {len(maps)} saliency map pairs")
    if not pairs:
        raise ContractError("curve evaluation needs at least one pair")
    imgs_a = [as_image(p.image_a) for p in pairs]
    imgs_b = [as_image(p.image_b) for p in pairs]
    orders_a, orders_b = [], []
    for i, (sa, sb) in enumerate(maps):
        if np.shape(sa) != imgs_a[i].shape[:2] or np.shape(sb) != imgs_b[i].shape[:2]:
            raise ContractError(f"pair {i}: saliency map shape does not match image")
        orders_a.append(rank_pixels(sa, cfg.ranking_source))
        orders_b.append(rank_pixels(sb, cfg.ranking_source))
    labels = [p.label for p in pairs]
    fractions, accs = [], []
    for k in range(cfg.steps + 1):
        mod_a, mod_b = [], []
        for img_a, img_b, oa, ob in zip(imgs_a, imgs_b, orders_a, orders_b):
            na = pixel_count(k, cfg.steps, oa.size)
            nb = pixel_count(k, cfg.steps, ob.size)
            if mode == "deletion":
                mod_a.append(delete_top(img_a, oa, na, cfg.deletion_fill))
                mod_b.append(delete_top(img_b, ob, nb, cfg.deletion_fill))
            else:
                mod_a.append(insert_top(img_a, oa, na, cfg.insertion_base))
                mod_b.append(insert_top(img_b, ob, nb, cfg.insertion_base))
        try:
            scores = pair_scores(backend, mod_a, mod_b)
        except Exception as exc:
            raise type(exc)(f"{mode} step {k}: {exc}") from exc
        fractions.append(k / cfg.steps)
        accs.append(_accuracy(scores, labels, cfg.threshold))
    return EvalCurve.from_points(fractions, accs)


def deletion_curve(backend, pairs, maps, cfg):
    """Accuracy as the most salient pixels are overwritten with ``cfg.deletion_fill``."""
    return _curve(backend, pairs, maps, cfg, "deletion")


def insertion_curve(backend, pairs, maps, cfg):
    """Accuracy as the most salient pixels are revealed on a constant image."""
    return _curve(backend, pairs, maps, cfg, "insertion")


# ---------------------------------------------------------------------------
# saliency methods


def baseline_saliency(kind, dims, seed=0):
    h, w = dims
    if kind == "random":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        return rng.uniform(-1.0, 1.0, size=(h, w))
    if kind in ("center", "center-prior"):
        sigma = min(h, w) / 4.0
        y = np.arange(h) - (h - 1) / 2.0
        x = np.arange(w) - (w - 1) / 2.0
        d2 = y[:, None] ** 2 + x[None, :] ** 2
        return np.exp(-d2 / (2.0 * sigma * sigma))
    raise ConfigError(f"unknown baseline kind {kind!r}")


class SaliencyMethod:
    name = "method"

    def cache_key(self):
        return self.name

    def maps(self, backend, img_a, img_b, pair_index=0):
        raise NotImplementedError


class CorrRiseMethod(SaliencyMethod):
    name = "corrrise"

    def __init__(self, mask_config=None, workers=1):
        self.mask_config = mask_config or MaskGenConfig()
        self.workers = workers

    def cache_key(self):
        c = self.mask_config
        return f"corrrise-n{c.num_masks}-k{c.patches_per_mask}-p{c.patch_size}-b{c.blur}-s{c.seed}"

    def maps(self, backend, img_a, img_b, pair_index=0):
        res = explain_pair(ExplainRequest(img_a, img_b, backend, self.mask_config), workers=self.workers)
        return res.s_a, res.s_b


class BaselineMethod(SaliencyMethod):
    def __init__(self, kind, seed=0):
        if kind not in ("random", "center"):
            raise ConfigError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.name = kind
        self.seed = int(seed)

    def cache_key(self):
        return f"{self.kind}-s{self.seed}"

    def maps(self, backend, img_a, img_b, pair_index=0):
        h, w = np.shape(img_a)[:2]
        if self.kind == "center":
            m = baseline_saliency("center", (h, w))
            return m, m.copy()
        return (baseline_saliency("random", (h, w), [self.seed, pair_index, 0]),
                baseline_saliency("random", (h, w), [self.seed, pair_index, 1]))


def make_method(name, mask_config=None, seed=0, workers=1):
    if name == "corrrise":
        return CorrRiseMethod(mask_config, workers=workers)
    if name in ("random", "center"):
        return BaselineMethod(name, seed=seed)
    raise ConfigError(f"unknown saliency method {name!r}")


def pair_digest(pair):
    h = hashlib.sha256()
    for img in (pair.image_a, pair.image_b):
        arr = np.ascontiguousarray(img, dtype=np.float64)
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:24]


def _atomic_save(path, s):
    from .io import save_saliency

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        save_saliency(s, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def compute_maps(method, backend, pairs, cache_dir=None):
    """Saliency maps for every pair, reusing an on-disk cache when given.

    Cache entries are keyed by method configuration and the pair's pixel data.
    """
    from .io import load_saliency

    out = []
    for i, pair in enumerate(pairs):
        paths = None
        if cache_dir is not None:
            stem = Path(cache_dir) / method.cache_key() / f"{i:05d}-{pair_digest(pair)}"
            paths = (stem.with_suffix(".a.salm"), stem.with_suffix(".b.salm"))
            if all(p.exists() for p in paths):
                out.append((load_saliency(paths[0]), load_saliency(paths[1])))
                continue
        sa, sb = method.maps(backend, pair.image_a, pair.image_b, pair_index=i)
        # round to the float32 storage precision so cached and fresh runs agree
        sa = np.asarray(sa, dtype=np.float32).astype(np.float64)
        sb = np.asarray(sb, dtype=np.float32).astype(np.float64)
        if paths is not None:
            _atomic_save(paths[0], sa)
            _atomic_save(paths[1], sb)
        out.append((sa, sb))
    return out


def evaluate_method(backend, pairs, maps, cfg):
    return deletion_curve(backend, pairs, maps, cfg), insertion_curve(backend, pairs, maps, cfg)
