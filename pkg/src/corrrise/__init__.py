"""Signed saliency explanations for black-box face verification models."""

__version__ = "0.1.0"

from .errors import (BackendError, ConfigError, ContractError, CorrRiseError, DataError,
                     DegenerateInputError, FormatError, UnsupportedOperationError)
from .numerics import (EvalCurve, apply_mask, auc_trapezoid, cosine_similarity, pearson_correlation,
                       pixel_correlation, split_signed)
from .maskgen import MaskGenConfig, generate_mask, generate_stack
from .embedder import (ConstantEmbedder, EmbedderBackend, FunctionEmbedder, OnnxEmbedder,
                       ToyRegionEmbedder, embed, embed_batch, load_backend, randomize_parameters)
from .explain import ExplainRequest, ExplainResult, explain_pair
from .metrics import (EvalConfig, LabeledPair, baseline_saliency, deletion_curve, insertion_curve,
                      rank_pixels, verification_accuracy)
