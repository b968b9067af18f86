"""Incremental HDR color estimation for noisy, saturating 8-bit cameras.

The package has four layers:

* :mod:`hdrfusion.radiometry` - camera model: inverse/forward response,
  vignetting, exposure programs, the signal-dependent noise model, and
  calibration fits for both.
* :mod:`hdrfusion.fusion` - the per-point two-state HDR color estimator
  (radiance bounds while saturated, inverse-variance running mean once a
  fully well-exposed sample arrives) and its 64-bit packed representation.
* :mod:`hdrfusion.controller` - exposure-time selection that maximizes the
  expected information gain of the next frame, plus sweep baselines.
* :mod:`hdrfusion.sensorsim` / :mod:`hdrfusion.harness` - a seeded synthetic
  camera with command lag and the experiment runner that races controllers
  against each other on it.
"""

from .radiometry import (
    CalibrationError,
    ExposureProgram,
    LdrFrame,
    NoiseModel,
    ResponseCurve,
    VignettingMap,
    detectable_range,
    estimate_radiance,
    fit_noise_coefficient,
    fit_response_curve,
    forward_response,
    inverse_response,
    radiance_variance,
)
from .fusion import (
    CompleteColor,
    FusionStats,
    IncompleteColor,
    MapBuffer,
    Observation,
    PackedColor,
    classify,
    fuse_frame,
    pack,
    promote,
    unpack,
    update_complete,
    update_incomplete,
)
from .controller import (
    ControllerConfig,
    ControllerInput,
    SweepController,
    UtilityController,
    baseline_sweep,
    exploration_utility,
    refinement_utility,
    saturation_probability,
    select_exposure,
)
from .sensorsim import (
    CameraSim,
    Scene,
    batch_ground_truth,
    make_scene,
    synthetic_vignetting,
)
from .harness import ExperimentConfig, FrameRecord, emit_csv, emit_plot, run_experiment

__all__ = [
    "CalibrationError",
    "CameraSim",
    "CompleteColor",
    "ControllerConfig",
    "ControllerInput",
    "ExperimentConfig",
    "ExposureProgram",
    "FrameRecord",
    "FusionStats",
    "IncompleteColor",
    "LdrFrame",
    "MapBuffer",
    "NoiseModel",
    "Observation",
    "PackedColor",
    "ResponseCurve",
    "Scene",
    "SweepController",
    "UtilityController",
    "VignettingMap",
    "baseline_sweep",
    "batch_ground_truth",
    "classify",
    "detectable_range",
    "emit_csv",
    "emit_plot",
    "estimate_radiance",
    "exploration_utility",
    "fit_noise_coefficient",
    "fit_response_curve",
    "forward_response",
    "fuse_frame",
    "inverse_response",
    "make_scene",
    "pack",
    "promote",
    "radiance_variance",
    "refinement_utility",
    "run_experiment",
    "saturation_probability",
    "select_exposure",
    "synthetic_vignetting",
    "unpack",
    "update_complete",
    "update_incomplete",
]

__version__ = "0.1.0"
