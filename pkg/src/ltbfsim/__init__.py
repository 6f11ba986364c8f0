"""Long-term beamforming under finite-precision approximate inversion,
with long-term interference subspace nulling."""

from .arith import FP32, FP64, Q7_16, Q15_16, ArithmeticProfile, profile
from .channel import ArrayGeometry, ScenarioConfig, evolve, generate_drop
from .inversion import InversionSpec, approx_inverse
from .ltbf import NullingConfig, build_beamformers, estimate_covariances
from .harness import SweepSpec, run_sweep

__version__ = "0.1.0"
