"""Differentially private synthetic data (MWEM) with the curator emulated by
three-party replicated secret sharing."""

from .data import Schema, ShareFile, load_csv_discretize
from .mechanisms import PinnedTape, PrivacyBudget
from .mwem import CentralBackend, HistogramDomain, MwemConfig, gen_workload, run_mwem
from .ring import DEFAULT_CODEC, FixedPointCodec

__all__ = [
    "CentralBackend", "DEFAULT_CODEC", "FixedPointCodec", "HistogramDomain", "MwemConfig",
    "PinnedTape", "PrivacyBudget", "Schema", "ShareFile", "gen_workload", "load_csv_discretize", "run_mwem",
]
__version__ = "0.1.0"
