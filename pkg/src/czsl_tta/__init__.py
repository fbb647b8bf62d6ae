"""Online test-time adaptation of textual and visual class prototypes for
compositional (attribute-object) zero-shot classification."""

from .config import EngineConfig, Switches, preset
from .engine import Engine, PredictionRecord
from .io import Bundle, load_bundle, save_bundle
from .metrics import bias_sweep, compute_metrics, cumulative_accuracy, long_tail_metrics
from .runner import RunOutput, run
from .space import CompositionSpace, build_composition_space, l2_normalize

__all__ = [
    "Bundle",
    "RunOutput",
    "CompositionSpace",
    "Engine",
    "EngineConfig",
    "PredictionRecord",
    "Switches",
    "bias_sweep",
    "build_composition_space",
    "compute_metrics",
    "cumulative_accuracy",
    "l2_normalize",
    "load_bundle",
    "long_tail_metrics",
    "preset",
    "run",
    "save_bundle",
]
