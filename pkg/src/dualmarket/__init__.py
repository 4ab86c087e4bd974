"""Deterministic simulator of a dual market for data and computation.

One side is a token-voted data market: contributors propose datasets,
curator-token holders vote (optionally through delegation), accepted
contributions mint shares, and job payments pay dividends to shareholders.
The other side is a trusted-scheduler compute market: jobs train a
splittable model across redundancy groups of untrusted workers, results are
verified by digest unanimity, and raw-data exposure per worker is capped
and audited.

Everything runs on a simulated network with exact rational time, seeded
randomness, and fixed floating-point operation order, so a scenario always
reproduces the same report, byte for byte.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .compute_market import ComputeMarket
from .data_market import DataAssociation
from .engine import Engine
from .errors import MarketError
from .ledger import Ledger
from .model_split import ModelSpec
from .report import render_report, run_scenario, verify_report
from .scenario import load_scenario, parse_scenario
from .simnet import LatencyModel, SimNet

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "ComputeMarket",
    "DataAssociation",
    "Engine",
    "MarketError",
    "Ledger",
    "LatencyModel",
    "ModelSpec",
    "SimNet",
    "load_scenario",
    "parse_scenario",
    "render_report",
    "run_scenario",
    "verify_report",
    "__version__",
]
