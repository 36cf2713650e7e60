"""Online high-dimensional changepoint detection with post-declaration confidence intervals."""

from .calibration import TuningPreset, monte_carlo_thresholds, practical_preset, theoretical_preset
from .detector import DetectorConfig, DetectorState, Variant, feed, new_state, restore, snapshot, step
from .grid import ScaleGrid, build_scale_grid
from .inference import InferenceConfig, InferenceResult, run_ocd_ci, univariate_ci

__all__ = [
    "DetectorConfig",
    "DetectorState",
    "InferenceConfig",
    "InferenceResult",
    "ScaleGrid",
    "TuningPreset",
    "Variant",
    "build_scale_grid",
    "feed",
    "monte_carlo_thresholds",
    "new_state",
    "practical_preset",
    "restore",
    "run_ocd_ci",
    "snapshot",
    "step",
    "theoretical_preset",
    "univariate_ci",
]
