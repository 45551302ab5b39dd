"""Seeded random patch masks.

Each mask starts at zero; ``patches_per_mask`` axis-aligned squares of side
``patch_size`` are placed fully inside the image, each filled with a single
value drawn uniformly from [0, 1). Overlaps merge by per-pixel maximum.

Random numbers come from SplitMix64 used in counter mode: draw ``k`` of a
stream seeded with ``s`` is ``mix64(s + (k + 1) * 0x9E3779B97F4A7C15 mod 2**64)``.
A uniform double is ``(x >> 11) * 2**-53`` and a placement index in
``[0, span)`` is ``floor(u * span)``. Draws are consumed per patch in the
order row, column, value; patches in order; masks in order. The stream is
therefore portable and any mask of a stack can be regenerated on its own.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG_53 = 2.0 ** -53

DEFAULT_NUM_MASKS = 500
DEFAULT_PATCHES = 8
REFERENCE_SIZE = 112
REFERENCE_PATCH = 28


def mix64(z):
    """SplitMix64 finaliser applied element-wise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_u64(seed, start, count):
    """Draws ``start .. start+count-1`` of the stream for ``seed``."""
    seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = seed + k * GOLDEN_GAMMA
    return mix64(state)


def stream_uniform(seed, start, count):
    return (stream_u64(seed, start, count) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53


def default_patch_size(height, width):
    return max(1, int(round(REFERENCE_PATCH * min(height, width) / REFERENCE_SIZE)))


@dataclass(frozen=True)
class MaskGenConfig:
    num_masks: int = DEFAULT_NUM_MASKS
    patches_per_mask: int = DEFAULT_PATCHES
    patch_size: int = None  # None -> 28 px scaled from a 112 px reference
    seed: int = 0
    blur: int = 0  # optional box-blur radius; 0 keeps hard edges

    def resolved_patch_size(self, height, width):
        return self.patch_size if self.patch_size is not None else default_patch_size(height, width)

    def validate(self, height, width):
        if self.num_masks < 2:
            raise ConfigError("num_masks must be at least 2")
        if self.patches_per_mask < 1:
            raise ConfigError("patches_per_mask must be positive")
        if self.blur < 0:
            raise ConfigError("blur radius must be non-negative")
        size = self.resolved_patch_size(height, width)
        if size < 1:
            raise ConfigError("patch_size must be positive")
        if size > min(height, width):
            raise ConfigError(f"patch_size {size} exceeds image size {height}x{width}")
        return size

    def as_dict(self):
        return asdict(self)


class PatchStream:
    """Cursor over the SplitMix64 stream of one seed."""

    def __init__(self, seed, position=0):
        self.seed = int(seed)
        self.position = int(position)

    def take(self, count):
        u = stream_uniform(self.seed, self.position, count)
        self.position += count
        return u


def _placements(stream, count, patches, size, height, width):
    u = stream.take(3 * count * patches).reshape(count, patches, 3)
    rows = np.floor(u[..., 0] * (height - size + 1)).astype(np.int64)
    cols = np.floor(u[..., 1] * (width - size + 1)).astype(np.int64)
    return rows, cols, u[..., 2]


def _blur(masks, radius):
    from scipy.ndimage import uniform_filter

    return np.clip(uniform_filter(masks, size=(1, 2 * radius + 1, 2 * radius + 1), mode="nearest"), 0.0, 1.0)


def generate_mask(cfg, stream, height, width):
    """Draw the next mask from ``stream`` (a PatchStream)."""
    return generate_masks(cfg, stream, height, width, 1)[0]


def generate_masks(cfg, stream, height, width, count):
    size = cfg.validate(height, width)
    rows, cols, values = _placements(stream, count, cfg.patches_per_mask, size, height, width)
    masks = _kernels.rasterize_patches(rows, cols, values, size, height, width)
    if cfg.blur:
        masks = _blur(masks, cfg.blur)
    return masks


def generate_stack(cfg, height, width):
    """The full (N, H, W) stack determined by ``cfg`` and the image size."""
    return generate_masks(cfg, PatchStream(cfg.seed), height, width, cfg.num_masks)


def expected_coverage(cfg, height, width):
    """Expected fraction of nonzero pixels per mask under uniform placement.

    Uses the mean single-patch coverage probability over all pixels, so it is
    exact for the first patch and the usual independence approximation for
    the union.
    """
    size = cfg.resolved_patch_size(height, width)
    return 1.0 - (1.0 - size * size / (height * width)) ** cfg.patches_per_mask
