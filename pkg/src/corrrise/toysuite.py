"""Synthetic verification suite for desk-scale experiments.

Identities are smooth random colour fields (a 7x7 grid of RGB values
upsampled bilinearly); each photo of an identity adds its own smooth
variation field (a 4x4 grid, standing in for pose and lighting), a global
gain and Gaussian sensor noise. The paired backend is a ToyRegionEmbedder
that only looks at the left half of the image.
"""

import numpy as np
from scipy.ndimage import zoom

from .embedder import ToyRegionEmbedder
from .metrics import MATCH, NONMATCH, LabeledPair

SIZE = 112
GRID = 8
LEFT_HALF = (0, 0, SIZE // 2, SIZE)  # x0, y0, x1, y1


def identity_field(identity, size=SIZE, cells=7):
    rng = np.random.default_rng(np.random.SeedSequence([identity, 0xFACE]))
    low = rng.uniform(0.15, 0.85, size=(cells, cells, 3))
    field = zoom(low, (size / cells, size / cells, 1), order=1)
    return field[:size, :size]


def photo(identity, shot, size=SIZE, noise=0.03, variation=0.05):
    rng = np.random.default_rng(np.random.SeedSequence([identity, shot, 0x5107]))
    gain = rng.uniform(0.9, 1.1)
    shot_field = zoom(rng.normal(0.0, variation, size=(4, 4, 3)), (size / 4, size / 4, 1), order=1)[:size, :size]
    img = identity_field(identity, size) * gain + shot_field + rng.normal(0.0, noise, size=(size, size, 3))
    return np.clip(img, 0.0, 1.0)


def toy_backend(region=LEFT_HALF, size=SIZE):
    return ToyRegionEmbedder(grid=GRID, input_size=(size, size), channels=3, sensitive_region=region)


def toy_pairs(n_match=10, n_nonmatch=10, seed=0, size=SIZE):
    """Matching pairs first, then non-matching ones."""
    base = 1000 * int(seed)
    pairs = []
    for i in range(n_match):
        ident = base + i
        pairs.append(LabeledPair(photo(ident, 0, size), photo(ident, 1, size), MATCH, f"m{i:03d}"))
    for i in range(n_nonmatch):
        a, b = base + 500 + 2 * i, base + 501 + 2 * i
        pairs.append(LabeledPair(photo(a, 0, size), photo(b, 0, size), NONMATCH, f"n{i:03d}"))
    return pairs
