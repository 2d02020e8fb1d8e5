"""Initial access analysis and simulation for millimeter-wave cellular networks."""

from .core import (
    ALL_PROTOCOLS,
    BeamGain,
    ConfigError,
    Exponential,
    LosBall,
    Protocol,
    ProtocolName,
    SystemConfig,
    bs_beam_gain,
    inverse_path_loss,
    los_probability,
    parse_blockage,
    path_loss,
    user_beam_gain,
)
from .quadrature import ConvergenceError, QuadratureSpec, integrate, special_u, special_v
from .analytic import AnalyticContext, IAMetrics, analyze
from .simulator import MetricsReport, SimulationConfig, run_campaign

__version__ = "0.1.0"
