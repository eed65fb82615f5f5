"""Patch-level tampering localization for scientific images.

The toolkit suppresses image content with a bank of noise residuals, models
each region's residual statistics with per-cell one-class SVMs, turns the
cross-cell outlier likelihoods into position-invariant patch features, and
classifies patches with a small MLP. A synthetic-corpus generator, a
noise-level baseline, and an evaluation harness round out the pipeline.
"""

__version__ = "0.1.0"

from . import config, features, image, metrics, mlp, ocsvm, pipeline, residuals, synth
from .config import PipelineConfig, config_hash, load_config
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    ImageError,
    NoiseGridError,
    UndefinedMetricError,
    ZeroVarianceError,
)
from .features import ExtractorConfig, FeatureMatrix, extract
from .image import (
    load_image,
    load_mask,
    mask_to_patch_labels,
    save_image,
    save_mask,
    to_grayscale,
)
from .metrics import accuracy_genuine, auc, evaluate, f1, noi_score
from .mlp import MlpArchitecture, TrainSpec, predict_map
from .pipeline import cmd_eval, cmd_features, cmd_predict, cmd_synth, cmd_train
from .residuals import ResidualConfig, build_stack
from .synth import Rect, TamperRecord, procedural_background
