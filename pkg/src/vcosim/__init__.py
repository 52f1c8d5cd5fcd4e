"""Behavioral simulator for oscillator-based sigma-delta ADCs.

The loop filter under study is built from oscillators, counters, and modulo
arithmetic instead of analog integrators: an input VCO feeds a Gray-coded
counter, a finite-width subtractor closes the loop around a DAC-driven
second oscillator, and the sampled word is first-differenced into the
noise-shaped output.  The package provides

* a step-accurate engine for the full system (``modulator``), including the
  asynchronous-sampler metastability model and higher-order cascades,
* exact fixed-point references for the idealized architectures
  (``reference``) to prove equivalences sample-by-sample,
* the closed-form linear model (``linear_model``) derived symbolically,
* measurement tooling — averaged periodograms, A-weighting, SNDR/THD,
  sweeps (``spectral``),
* and a CLI (``vcosim``) that packages the standard experiments.
"""
from ._version import __version__
from .config import SamplerConfig, SimConfig, config_digest, load_config
from .digital import (
    DigitalWord,
    GrayWidthExtender,
    SamplerModel,
    binary_to_gray,
    first_difference,
    gray_from_phases,
    gray_to_binary,
    mod_subtract,
)
from .errors import ConfigError, SimulationDiverged
from .linear_model import (
    ntf_coefficients,
    ntf_db,
    ntf_magnitude,
    ntf_poles,
    stf_db,
    stf_magnitude,
)
from .modulator import (
    LockReport,
    ModulatorTrace,
    lock_check,
    measure_ntf,
    simulate_higher_order,
    simulate_proposed,
)
from .oscillator import DacModel, NoiseParams, OscillatorParams
from .reference import (
    NestedResult,
    ReferenceResult,
    compare_architectures,
    simulate_nested,
    simulate_reference_ctsdm,
)
from .signal_gen import Stimulus, dbv_to_peak, generate
from .spectral import (
    SpectrumRecord,
    a_weight_db,
    amplitude_sweep,
    aop_dbv,
    averaged_periodogram,
    dynamic_range_db,
    sndr_db,
    snr_db,
    thd_pct,
)

__all__ = [
    "__version__",
    "ConfigError",
    "SimulationDiverged",
    "SimConfig",
    "SamplerConfig",
    "load_config",
    "config_digest",
    "Stimulus",
    "dbv_to_peak",
    "generate",
    "DigitalWord",
    "binary_to_gray",
    "gray_to_binary",
    "gray_from_phases",
    "GrayWidthExtender",
    "mod_subtract",
    "first_difference",
    "SamplerModel",
    "OscillatorParams",
    "DacModel",
    "NoiseParams",
    "ntf_coefficients",
    "ntf_magnitude",
    "ntf_poles",
    "ntf_db",
    "stf_magnitude",
    "stf_db",
    "ModulatorTrace",
    "LockReport",
    "simulate_proposed",
    "simulate_higher_order",
    "lock_check",
    "measure_ntf",
    "ReferenceResult",
    "NestedResult",
    "simulate_reference_ctsdm",
    "simulate_nested",
    "compare_architectures",
    "SpectrumRecord",
    "averaged_periodogram",
    "a_weight_db",
    "snr_db",
    "sndr_db",
    "thd_pct",
    "amplitude_sweep",
    "aop_dbv",
    "dynamic_range_db",
]
