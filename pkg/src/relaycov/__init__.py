"""Coverage analysis of relay-assisted mmWave cellular networks with
selection combining at multi-antenna destinations."""

from .analysis import (
    Mode,
    NotAchievable,
    NumericalInstability,
    QuadratureConfig,
    coverage_br,
    coverage_breakdown,
    coverage_direct_correlated,
    coverage_rd_correlated,
    coverage_total,
    min_antennas,
    optimal_bs_density,
)
from .model import NetworkParams, db_to_linear, reference_params, validate
from .simulate import CorrelationMode, DesiredFading, SimConfig, estimate_coverage

__version__ = "0.1.0"
