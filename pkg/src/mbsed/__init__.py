"""Many-body density-shift simulator for optical lattice clocks."""

__version__ = "0.1.0"

from .config import Config, ConfigError, dump_config, load_config, parse_config
from .spectroscopy import (
    ShiftExtractionError,
    ShiftResult,
    Spectrum,
    extract_shift,
    run_collective,
    run_protocol,
    run_rabi,
    run_ramsey,
)
from .calibration import ShiftDataset, fit_scattering_lengths, synthetic_dataset

__all__ = [
    "Config",
    "ConfigError",
    "ShiftDataset",
    "ShiftExtractionError",
    "ShiftResult",
    "Spectrum",
    "__version__",
    "dump_config",
    "extract_shift",
    "fit_scattering_lengths",
    "load_config",
    "parse_config",
    "run_collective",
    "run_protocol",
    "run_rabi",
    "run_ramsey",
    "synthetic_dataset",
]
