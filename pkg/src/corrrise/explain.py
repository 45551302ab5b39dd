"""CorrRISE: correlation-based randomized input sampling for image pairs.

For a pair (A, B) and a stack of N random masks, each image is masked in
turn and embedded; the masked embedding is compared by cosine similarity to
the *unmasked* embedding of the other image. Every pixel's mask values are
then Pearson-correlated with that score series, giving a signed map per
image: positive where visibility raises similarity, negative where it
lowers it.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BackendError, ContractError, DegenerateInputError
from .maskgen import MaskGenConfig, generate_stack
from .numerics import as_image, pixel_correlation, split_signed

CHUNK = 25  # iterations per embedding batch; fixed so results never depend on worker count


@dataclass
class ExplainRequest:
    image_a: np.ndarray
    image_b: np.ndarray
    backend: object
    mask_config: MaskGenConfig = field(default_factory=MaskGenConfig)


@dataclass
class ExplainResult:
    s_a: np.ndarray
    s_b: np.ndarray
    score_unperturbed: float
    score_series_a: np.ndarray  # length N, NaN where the iteration was skipped
    score_series_b: np.ndarray
    skipped_a: list
    skipped_b: list
    metadata: dict

    @property
    def positive_a(self):
        return split_signed(self.s_a)[0]

    @property
    def negative_a(self):
        return split_signed(self.s_a)[1]

    @property
    def positive_b(self):
        return split_signed(self.s_b)[0]

    @property
    def negative_b(self):
        return split_signed(self.s_b)[1]

    def decision(self, threshold):
        return "match" if self.score_unperturbed >= threshold else "nonmatch"


def _unit(v):
    n = np.linalg.norm(v)
    return None if n == 0.0 else v / n


def _masked_scores(backend, img, masks, reference, start, stop):
    """Cosine scores of masked ``img`` against the unit ``reference``; NaN if degenerate."""
    stack = img[None] * masks[start:stop, :, :, None]
    try:
        emb = np.asarray(backend.embed_stack(stack), dtype=np.float64)
    except BackendError as exc:
        idx = start if exc.index is None else start + exc.index
        raise BackendError(f"iteration {idx}: {exc}", index=idx) from exc
    if not np.all(np.isfinite(emb)):
        raise BackendError(f"non-finite embedding in iterations {start}..{stop - 1}", index=start)
    norms = np.linalg.norm(emb, axis=1)
    out = np.full(stop - start, np.nan)
    ok = norms > 0
    out[ok] = np.clip((emb[ok] / norms[ok, None]) @ reference, -1.0, 1.0)
    return out


def score_series(backend, img, masks, reference_embedding, workers=1):
    """Similarity of every masked ``img`` to ``reference_embedding``.

    Scores land in preallocated slots by iteration index, so the series is the
    same for any worker count.
    """
    ref = _unit(np.asarray(reference_embedding, dtype=np.float64))
    if ref is None:
        raise DegenerateInputError("reference embedding has zero norm")
    n = len(masks)
    out = np.empty(n)
    bounds = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]

    def run(b):
        out[b[0]:b[1]] = _masked_scores(backend, img, masks, ref, *b)

    if workers > 1 and getattr(backend, "thread_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds))
    else:
        for b in bounds:
            run(b)
    return out


def saliency_from_scores(masks, scores):
    """Per-pixel Pearson map over the iterations whose score is finite."""
    masks = np.asarray(masks, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.isfinite(scores)
    if keep.sum() < 2:
        return np.zeros(masks.shape[1:])
    if not keep.all():
        masks, scores = masks[keep], scores[keep]
    return pixel_correlation(masks, scores)


def explain_pair(req, workers=1, masks=None):
    """Signed saliency maps for both images of ``req``.

    ``masks`` overrides the generated stack (used by tests that fix masks by hand).
    """
    img_a = req.backend.check_image(req.image_a)
    img_b = req.backend.check_image(req.image_b)
    if img_a.shape != img_b.shape:
        raise ContractError(f"pair shapes differ: {img_a.shape} vs {img_b.shape}")
    h, w = img_a.shape[:2]
    cfg = req.mask_config
    if masks is None:
        masks = generate_stack(cfg, h, w)
    else:
        masks = np.asarray(masks, dtype=np.float64)
        if masks.ndim != 3 or masks.shape[1:] != (h, w) or len(masks) < 2:
            raise ContractError(f"mask stack shape {masks.shape} unusable for {h}x{w} images")

    x_a = req.backend.embed(img_a)
    x_b = req.backend.embed(img_b)
    if np.linalg.norm(x_a) == 0 or np.linalg.norm(x_b) == 0:
        raise DegenerateInputError("unmasked image produced a zero-norm embedding")
    base = float(np.clip(_unit(x_a) @ _unit(x_b), -1.0, 1.0))

    sc_a = score_series(req.backend, img_a, masks, x_b, workers)
    sc_b = score_series(req.backend, img_b, masks, x_a, workers)
    s_a = saliency_from_scores(masks, sc_a)
    s_b = saliency_from_scores(masks, sc_b)
    skipped_a = np.flatnonzero(~np.isfinite(sc_a)).tolist()
    skipped_b = np.flatnonzero(~np.isfinite(sc_b)).tolist()

    meta = {
        "algorithm": "corrrise",
        "num_masks": int(len(masks)),
        "mask_config": cfg.as_dict(),
        "patch_size": int(cfg.resolved_patch_size(h, w)),
        "mask_base_value": 0.0,
        "mask_merge": "max",
        "mask_rng": "splitmix64-counter",
        "score": "cosine",
        "backend": req.backend.describe(),
        "image_shape": list(img_a.shape),
        "skipped_a": skipped_a,
        "skipped_b": skipped_b,
        "kernels": _kernels.active_backend(),
    }
    return ExplainResult(s_a, s_b, base, sc_a, sc_b, skipped_a, skipped_b, meta)
