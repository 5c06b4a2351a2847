"""Grouped-convolution CNN sweeps with simulated quint8 quantization and layerwise range analysis."""

from .arch import (
    ConvSpec,
    DepthwiseSeparable,
    FactorizationScheme,
    MacroArchConfig,
    NetworkPlan,
    Regular,
    ReversePyramid,
    Uniform,
    build_network,
    build_plan,
    layer_macs,
    network_macs,
    parse_scheme,
    progression,
)
from .errors import (
    ConfigurationError,
    CorruptCheckpointError,
    CorruptRecordError,
    FactorizeNetError,
    IngestionError,
    RejectedInputError,
    TrainingDivergedError,
)

__version__ = "0.1.0"
