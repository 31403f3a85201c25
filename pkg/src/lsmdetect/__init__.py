"""Object detection under the linear subspace model with error-rate control."""
from .calibrate import CalibrationTable, NoiseModel, build_table, build_tables, sample_noise_field
from .core import BasisSet, GridBox, GridField, gram_schmidt, read_grid, write_grid
from .detect import DetectionResult, bh_select, bonferroni_select, select_candidates
from .estimator import SubspaceDetector
from .evaluation import ExperimentConfig, aggregate, classify, run_experiment
from .localize import DeltaCertificate, estimate_delta, evaluate_g, g_of_delta
from .scoremap import score_decompose, score_map
from .synth import Scene, fourier_bessel_basis, make_scene, render_scene

__version__ = "0.1.0"

__all__ = [
    "BasisSet",
    "CalibrationTable",
    "DeltaCertificate",
    "DetectionResult",
    "ExperimentConfig",
    "GridBox",
    "GridField",
    "NoiseModel",
    "Scene",
    "SubspaceDetector",
    "aggregate",
    "bh_select",
    "bonferroni_select",
    "build_table",
    "build_tables",
    "classify",
    "estimate_delta",
    "evaluate_g",
    "fourier_bessel_basis",
    "g_of_delta",
    "gram_schmidt",
    "make_scene",
    "read_grid",
    "render_scene",
    "run_experiment",
    "sample_noise_field",
    "score_decompose",
    "score_map",
    "select_candidates",
    "write_grid",
]
