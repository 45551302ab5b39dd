"""Filesystem side: manifests, images, SALM saliency files, heatmaps, config files.

SALM layout (little endian)::

    b"SALM"  u8 version=1  u32 height  u32 width  float32[height*width] row-major
"""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DataError, FormatError
from .metrics import LABELS, LabeledPair
from .numerics import as_image, as_saliency

SALM_MAGIC = b"SALM"
SALM_VERSION = 1
_HEADER = struct.Struct("<4sBII")
MANIFEST_HEADER = ("path_a", "path_b", "label")


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class PairRecord:
    path_a: Path
    path_b: Path
    label: str
    line: int = 0


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    base_dir: Path = Path(".")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def load_manifest(path):
    """Parse a ``path_a,path_b,label`` CSV. Relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    rows = csv.reader(text.splitlines())
    try:
        header = next(rows)
    except StopIteration:
        raise DataError(f"{path}:1: missing header {','.join(MANIFEST_HEADER)}")
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise DataError(f"{path}:1: header must be {','.join(MANIFEST_HEADER)}")
    base = path.parent
    seen = {}
    records = []
    for line, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            raise DataError(f"{path}:{line}: empty row")
        if len(row) != 3:
            raise DataError(f"{path}:{line}: expected 3 fields, got {len(row)}")
        a, b, label = (c.strip() for c in row)
        if not a or not b:
            raise DataError(f"{path}:{line}: empty image path")
        if label not in LABELS:
            raise DataError(f"{path}:{line}: label must be one of {'/'.join(LABELS)}, got {label!r}")
        key = (a, b)
        if key in seen:
            raise DataError(f"{path}:{line}: duplicate pair (first seen on line {seen[key]})")
        seen[key] = line
        records.append(PairRecord(base / a, base / b, label, line))
    return Manifest(records, base)


def write_manifest(path, rows):
    """Write ``(path_a, path_b, label)`` rows with the standard header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for row in rows:
            w.writerow([str(v) for v in row])


# ---------------------------------------------------------------------------
# images


def load_image(path, target_size=None, center_crop=True, channels=3):
    """Decode PNG/JPEG to (H, W, C) floats in [0, 1].

    With ``target_size`` the image is optionally centre-cropped to a square
    and bilinearly resized; an image already at the target size is left alone.
    """
    try:
        with Image.open(path) as im:
            im.load()
            im = im.convert("RGB" if channels == 3 else "L")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if target_size is not None:
        th, tw = (target_size, target_size) if np.isscalar(target_size) else target_size
        w, h = im.size
        if (h, w) != (th, tw):
            if center_crop and h != w:
                side = min(h, w)
                left, top = (w - side) // 2, (h - side) // 2
                im = im.crop((left, top, left + side, top + side))
            if im.size != (tw, th):
                im = im.resize((tw, th), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(img, path):
    img = as_image(img)
    arr = np.round(img * 255.0).astype(np.uint8)
    mode_arr = arr[:, :, 0] if arr.shape[2] == 1 else arr
    Image.fromarray(mode_arr).save(path, format="PNG")


def load_pairs(manifest, target_size=None, labels=None, channels=3):
    """Load every record into a LabeledPair; errors name the offending row."""
    pairs = []
    for rec in manifest:
        if labels is not None and rec.label not in labels:
            continue
        try:
            a = load_image(rec.path_a, target_size, channels=channels)
            b = load_image(rec.path_b, target_size, channels=channels)
        except DataError as exc:
            raise DataError(f"manifest line {rec.line}: {exc}") from exc
        pairs.append(LabeledPair(a, b, rec.label, f"line{rec.line}"))
    return pairs


# ---------------------------------------------------------------------------
# SALM saliency files


def encode_saliency(s):
    s = as_saliency(s)
    h, w = s.shape
    return _HEADER.pack(SALM_MAGIC, SALM_VERSION, h, w) + s.astype("<f4").tobytes()


def decode_saliency(data):
    if len(data) < _HEADER.size:
        raise FormatError(f"SALM data truncated: {len(data)} bytes is shorter than the header")
    magic, version, h, w = _HEADER.unpack_from(data)
    if magic != SALM_MAGIC:
        raise FormatError(f"bad SALM magic {magic!r}")
    if version != SALM_VERSION:
        raise FormatError(f"unsupported SALM version {version}")
    expected = _HEADER.size + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"SALM size mismatch: expected {expected} bytes, got {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w)
    return arr.astype(np.float64)


def save_saliency(s, path):
    Path(path).write_bytes(encode_saliency(s))


def load_saliency(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read saliency file {path}: {exc}") from exc
    try:
        return decode_saliency(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# heatmaps

WARM_LOW, WARM_HIGH = np.array([0.8, 0.0, 0.0]), np.array([1.0, 1.0, 0.0])
COOL_LOW, COOL_HIGH = np.array([0.0, 0.0, 0.8]), np.array([0.0, 1.0, 1.0])


def heatmap_rgb(img, s, mode="signed"):
    """Blend a saliency overlay onto ``img``; returns (H, W, 3) floats.

    Positive values use a red-to-yellow ramp, negative a blue-to-cyan ramp.
    Magnitude, normalised by the map's max |value|, sets both ramp position
    and opacity.
    """
    img = as_image(img)
    s = np.asarray(s, dtype=np.float64)
    if s.shape != img.shape[:2]:
        raise ContractError(f"map {s.shape} does not match image {img.shape[:2]}")
    if mode == "positive":
        s = np.where(s > 0, s, 0.0)
    elif mode == "negative":
        s = np.where(s < 0, s, 0.0)
    elif mode != "signed":
        raise ContractError(f"unknown heatmap mode {mode!r}")
    base = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img
    peak = np.abs(s).max(initial=0.0)
    if peak == 0.0:
        return base.copy()
    t = np.abs(s) / peak
    warm = WARM_LOW + t[..., None] * (WARM_HIGH - WARM_LOW)
    cool = COOL_LOW + t[..., None] * (COOL_HIGH - COOL_LOW)
    color = np.where((s > 0)[..., None], warm, cool)
    alpha = t[..., None]
    return base * (1.0 - alpha) + color * alpha


def render_heatmap(img, s, mode, path):
    rgb = heatmap_rgb(img, s, mode)
    Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8), "RGB").save(path, format="PNG")


def save_mask_png(mask, path):
    Image.fromarray(np.round(np.clip(mask, 0, 1) * 255).astype(np.uint8), "L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# key=value config files


def read_config(path):
    """Flat ``key=value`` lines; ``#`` starts a comment. Keys use flag spelling."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{n}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ContractError(f"{path}:{n}: empty key")
        out[key.lstrip("-").replace("-", "_")] = value
    return out
