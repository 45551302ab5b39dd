"""Black-box embedding backends.

A backend maps an (H, W, C) image in [0, 1] to a 1-D embedding. Three kinds
ship with the package:

* :class:`OnnxEmbedder` runs an ONNX model file (1xCxHxW in, 1xD out).
* :class:`ToyRegionEmbedder` grid-average-pools a (possibly region-gated)
  image; its sensitivity is known exactly, which makes it a localisation
  oracle for tests.
* :class:`ConstantEmbedder` / :class:`FunctionEmbedder` are test doubles.

``randomize_parameters`` returns a copy whose parameters are redrawn, for the
model-parameter randomisation sanity check.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import BackendError, ContractError, UnsupportedOperationError
from .numerics import as_image


class EmbedderBackend:
    """Base class. Subclasses implement ``_forward(batch) -> (B, D)``."""

    deterministic = True
    thread_safe = True
    input_shape = None  # (H, W, C); None accepts any size
    embedding_dim = None

    @property
    def backend_id(self):
        return type(self).__name__

    def describe(self):
        return {"id": self.backend_id, "embedding_dim": self.embedding_dim}

    def check_image(self, img):
        img = as_image(img)
        if self.input_shape is not None and img.shape != tuple(self.input_shape):
            raise ContractError(f"image shape {img.shape} does not match backend input {tuple(self.input_shape)}")
        return img

    def embed(self, img):
        img = self.check_image(img)
        try:
            out = self._forward(img[None])
        except BackendError:
            raise
        except Exception as exc:  # backend internals are opaque
            raise BackendError(f"{self.backend_id} inference failed: {exc}") from exc
        vec = np.asarray(out, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise BackendError(f"{self.backend_id} produced a non-finite embedding")
        return vec

    def embed_batch(self, imgs):
        out = []
        for i, img in enumerate(imgs):
            try:
                out.append(self.embed(img))
            except BackendError as exc:
                raise BackendError(f"batch element {i}: {exc}", index=i) from exc
            except ContractError as exc:
                raise ContractError(f"batch element {i}: {exc}") from exc
        return out

    def embed_stack(self, stack):
        """Embed an (B, H, W, C) array; row i equals ``embed(stack[i])``."""
        return np.stack(self.embed_batch(stack)) if len(stack) else np.zeros((0, self.embedding_dim or 0))

    def randomize_parameters(self, seed):
        raise UnsupportedOperationError(f"{self.backend_id} has no mutable parameters")

    def _forward(self, batch):
        raise NotImplementedError


def embed(backend, img):
    return backend.embed(img)


def embed_batch(backend, imgs):
    return backend.embed_batch(imgs)


def randomize_parameters(backend, seed):
    return backend.randomize_parameters(seed)


def _cell_edges(n, grid):
    return np.floor(np.arange(grid) * n / grid).astype(np.int64)


def _redraw_like(arr, rng):
    """I.i.d. normal draws matching the tensor's empirical mean and std."""
    arr = np.asarray(arr, dtype=np.float64)
    return rng.normal(arr.mean(), arr.std(), size=arr.shape)


class ToyRegionEmbedder(EmbedderBackend):
    """Grid mean-pooling over a gated image, optionally followed by a mixing matrix.

    ``sensitive_region`` is ``(x0, y0, x1, y1)`` in pixel coordinates,
    half-open, x along columns. Pixels outside it are multiplied by zero
    before pooling, so they cannot influence the embedding.
    """

    def __init__(self, grid=8, input_size=(112, 112), channels=3, sensitive_region=None,
                 pixel_weights=None, mixing=None, name=None):
        h, w = (int(v) for v in input_size)
        if grid < 1 or grid > min(h, w):
            raise ContractError(f"grid {grid} incompatible with input {h}x{w}")
        if channels not in (1, 3):
            raise ContractError("channels must be 1 or 3")
        self.grid = int(grid)
        self.channels = int(channels)
        self.input_shape = (h, w, self.channels)
        self.embedding_dim = self.grid * self.grid * self.channels
        self.sensitive_region = None if sensitive_region is None else tuple(int(v) for v in sensitive_region)
        if pixel_weights is None:
            pixel_weights = np.ones((h, w))
            if self.sensitive_region is not None:
                x0, y0, x1, y1 = self.sensitive_region
                if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                    raise ContractError(f"sensitive region {self.sensitive_region} outside {h}x{w} image")
                pixel_weights = np.zeros((h, w))
                pixel_weights[y0:y1, x0:x1] = 1.0
        self.pixel_weights = np.asarray(pixel_weights, dtype=np.float64)
        if self.pixel_weights.shape != (h, w):
            raise ContractError("pixel_weights must match input_size")
        self.mixing = None if mixing is None else np.asarray(mixing, dtype=np.float64)
        if self.mixing is not None and self.mixing.shape[1] != self.embedding_dim:
            raise ContractError("mixing matrix columns must equal grid*grid*channels")
        if self.mixing is not None:
            self.embedding_dim = self.mixing.shape[0]
        self._rows = _cell_edges(h, self.grid)
        self._cols = _cell_edges(w, self.grid)
        counts = np.add.reduceat(np.add.reduceat(np.ones((h, w)), self._rows, axis=0), self._cols, axis=1)
        self._counts = counts[:, :, None]
        self.name = name

    @property
    def backend_id(self):
        if self.name:
            return self.name
        return f"toy(grid={self.grid},region={self.sensitive_region})"

    def describe(self):
        return {
            "id": self.backend_id,
            "kind": "toy",
            "grid": self.grid,
            "input_shape": list(self.input_shape),
            "sensitive_region": None if self.sensitive_region is None else list(self.sensitive_region),
            "mixing": self.mixing is not None,
            "embedding_dim": self.embedding_dim,
        }

    def _forward(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        gated = batch * self.pixel_weights[None, :, :, None]
        sums = np.add.reduceat(np.add.reduceat(gated, self._rows, axis=1), self._cols, axis=2)
        out = (sums / self._counts[None]).reshape(len(batch), -1)
        if self.mixing is not None:
            # row by row: a batched matmul may reorder the sums
            out = np.stack([self.mixing @ row for row in out])
        return out

    def embed_stack(self, stack):
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 4 or stack.shape[1:] != self.input_shape:
            raise ContractError(f"stack shape {stack.shape[1:]} does not match backend input {self.input_shape}")
        return self._forward(stack)

    def randomize_parameters(self, seed):
        """Redraw the pixel gate and the mixing matrix from their own statistics."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x70F]))
        weights = _redraw_like(self.pixel_weights, rng)
        base = self.mixing if self.mixing is not None else np.eye(self.grid * self.grid * self.channels)
        mixing = _redraw_like(base, rng)
        return ToyRegionEmbedder(
            grid=self.grid, input_size=self.input_shape[:2], channels=self.channels,
            pixel_weights=weights, mixing=mixing,
            name=f"{self.backend_id}+randomized(seed={int(seed)})",
        )

    def to_json(self):
        if self.mixing is not None or (self.sensitive_region is None and not np.all(self.pixel_weights == 1)):
            raise UnsupportedOperationError("only unrandomised toy embedders can be serialised")
        return {
            "type": "toy",
            "grid": self.grid,
            "input_size": list(self.input_shape[:2]),
            "channels": self.channels,
            "sensitive_region": None if self.sensitive_region is None else list(self.sensitive_region),
        }


class ConstantEmbedder(EmbedderBackend):
    """Returns the same vector for every input."""

    def __init__(self, vector, input_shape=None):
        self.vector = np.asarray(vector, dtype=np.float64).ravel()
        self.embedding_dim = self.vector.size
        self.input_shape = None if input_shape is None else tuple(input_shape)

    def _forward(self, batch):
        return np.tile(self.vector, (len(batch), 1))


class FunctionEmbedder(EmbedderBackend):
    """Wraps ``fn(img) -> vector``; handy for scripted tests."""

    def __init__(self, fn, embedding_dim, input_shape=None, name="function"):
        self.fn = fn
        self.embedding_dim = embedding_dim
        self.input_shape = None if input_shape is None else tuple(input_shape)
        self.name = name

    @property
    def backend_id(self):
        return self.name

    def _forward(self, batch):
        return np.stack([np.asarray(self.fn(img), dtype=np.float64).ravel() for img in batch])


class OnnxEmbedder(EmbedderBackend):
    """Runs an ONNX face-embedding model with onnxruntime on CPU.

    Images are scaled to [0, 1] upstream; optional per-channel ``mean`` and
    ``std`` are applied here. Inference is one image per call so that batch
    results equal single-image results bit for bit.
    """

    def __init__(self, model, mean=None, std=None, input_size=None, threads=1, randomized_seed=None):
        import onnxruntime as ort

        if isinstance(model, (str, Path)):
            self.path = str(model)
            try:
                self.model_bytes = Path(model).read_bytes()
            except OSError as exc:
                raise BackendError(f"cannot read model file {model}: {exc}") from exc
        else:
            self.path = None
            self.model_bytes = bytes(model)
        opts = ort.SessionOptions()
        opts.intra_op_num_threads = int(threads)
        opts.inter_op_num_threads = 1
        try:
            self.session = ort.InferenceSession(self.model_bytes, sess_options=opts,
                                                providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise BackendError(f"cannot load ONNX model: {exc}") from exc
        inputs = self.session.get_inputs()
        outputs = self.session.get_outputs()
        if len(inputs) != 1 or len(outputs) < 1:
            raise BackendError("ONNX model must have exactly one input and one output")
        self.input_name = inputs[0].name
        self.output_name = outputs[0].name
        shape = inputs[0].shape
        if len(shape) != 4:
            raise BackendError(f"ONNX input must be rank 4 (1xCxHxW), got {shape}")
        c, h, w = shape[1:]
        if input_size is not None:
            h, w = input_size
        if not all(isinstance(v, int) for v in (c, h, w)):
            raise BackendError(f"ONNX input has dynamic dims {shape}; pass input_size")
        self.input_shape = (int(h), int(w), int(c))
        out_shape = outputs[0].shape
        self.embedding_dim = out_shape[-1] if isinstance(out_shape[-1], int) else None
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64).reshape(1, 1, -1)
        self.std = None if std is None else np.asarray(std, dtype=np.float64).reshape(1, 1, -1)
        self.threads = int(threads)
        self.randomized_seed = randomized_seed
        self.model_hash = hashlib.sha256(self.model_bytes).hexdigest()

    @property
    def backend_id(self):
        return f"onnx:{self.model_hash[:16]}"

    def describe(self):
        return {
            "id": self.backend_id,
            "kind": "onnx",
            "path": self.path,
            "model_sha256": self.model_hash,
            "input_shape": list(self.input_shape),
            "embedding_dim": self.embedding_dim,
            "mean": None if self.mean is None else self.mean.ravel().tolist(),
            "std": None if self.std is None else self.std.ravel().tolist(),
            "randomized_seed": self.randomized_seed,
            "randomized_scope": None if self.randomized_seed is None else "all float initializers",
        }

    def _preprocess(self, img):
        x = img
        if self.mean is not None:
            x = x - self.mean
        if self.std is not None:
            x = x / self.std
        return np.ascontiguousarray(x.transpose(2, 0, 1)[None], dtype=np.float32)

    def _forward(self, batch):
        rows = []
        for img in batch:
            out = self.session.run([self.output_name], {self.input_name: self._preprocess(img)})[0]
            rows.append(np.asarray(out, dtype=np.float64).reshape(-1))
        return np.stack(rows)

    def randomize_parameters(self, seed):
        """Redraw every float initializer i.i.d. from its own mean and std."""
        import onnx
        from onnx import numpy_helper

        model = onnx.load_from_string(self.model_bytes)
        redrawn = 0
        for i, init in enumerate(model.graph.initializer):
            arr = numpy_helper.to_array(init)
            if not np.issubdtype(arr.dtype, np.floating) or arr.size == 0:
                continue
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
            new = _redraw_like(arr, rng).astype(arr.dtype)
            init.CopyFrom(numpy_helper.from_array(new, init.name))
            redrawn += 1
        if redrawn == 0:
            raise UnsupportedOperationError("ONNX model has no float parameters to randomize")
        return OnnxEmbedder(
            model.SerializeToString(),
            mean=None if self.mean is None else self.mean.ravel(),
            std=None if self.std is None else self.std.ravel(),
            input_size=self.input_shape[:2], threads=self.threads, randomized_seed=int(seed),
        )


def load_backend(path, mean=None, std=None, threads=1):
    """Open a model file: ``*.onnx`` for neural models, ``*.json`` for toy specs."""
    path = Path(path)
    if not path.exists():
        raise BackendError(f"model file not found: {path}")
    if path.suffix.lower() == ".json":
        try:
            spec = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise BackendError(f"cannot parse toy model spec {path}: {exc}") from exc
        if spec.get("type") != "toy":
            raise BackendError(f"{path}: unknown model spec type {spec.get('type')!r}")
        backend = ToyRegionEmbedder(
            grid=spec.get("grid", 8),
            input_size=spec.get("input_size", (112, 112)),
            channels=spec.get("channels", 3),
            sensitive_region=spec.get("sensitive_region"),
        )
        backend.model_hash = hashlib.sha256(path.read_bytes()).hexdigest()
        return backend
    return OnnxEmbedder(path, mean=mean, std=std, threads=threads)
