"""Compressive hyperspectral reconstruction and chemical plume detection."""

__version__ = "0.1.0"

from .cube import CubeSequence, HyperCube, read_cube, read_sequence, write_cube, write_sequence
from .detection import (
    BackgroundModel,
    DetectionMap,
    Signature,
    ace,
    ace_map,
    bulk_coherence,
    estimate_background,
    persistence_filter,
)
from .errors import DimensionError, FormatError, HyperCSError
from .sampling import Measurements, SamplingPlan, build_plan, fast_wht, sample_cube
from .solver import ReconstructionResult, SolverParams, reconstruct, reconstruct_l1, reconstruct_tv
from .synthdata import SceneSpec, generate_scene, preset_scenarios
from .threshold import SWEEP_MULTIPLIERS, ThresholdSpec, compute_threshold, count_over, percentile_cut
from .wavelet import HaarSpec, haar_forward, haar_inverse
