"""Bit-exact functional and performance simulator for a multi-bit spike
convolution accelerator with a serial-parallel systolic dataflow."""

from .decompose import BitWidthPolicy, bitplane_decompose, calibrate_network, calibrate_policy
from .errors import (
    BankConflictError,
    BitWidthError,
    ConfigError,
    DivergenceError,
    ManifestError,
    PsumOverflowError,
    ShapeError,
    SNNAccelError,
)
from .ir import (
    LayerConfig,
    LayerShape,
    NetworkDesc,
    NeuronParams,
    ParallelismConfig,
    ResidualConfig,
    SpikeTensor,
    WeightTensor,
    load_manifest,
    save_manifest,
    validate_chain,
)
from .oracle import run_reference
from .pipeline import run_layer_accel, run_network_accel
from .schedperf import PerfReport, estimate, peak_figures

__version__ = "0.1.0"

__all__ = [
    "BankConflictError", "BitWidthError", "BitWidthPolicy", "ConfigError",
    "DivergenceError", "LayerConfig", "LayerShape", "ManifestError", "NetworkDesc",
    "NeuronParams", "ParallelismConfig", "PerfReport", "PsumOverflowError",
    "ResidualConfig", "SNNAccelError", "ShapeError", "SpikeTensor", "WeightTensor",
    "bitplane_decompose", "calibrate_network", "calibrate_policy", "estimate",
    "load_manifest", "peak_figures", "run_layer_accel", "run_network_accel",
    "run_reference", "save_manifest", "validate_chain",
]
