"""Periodic homogenization toolkit: correctors, spectral germs, threshold
operators and operator-norm error scans for e^{-i tau A_eps}."""

from .cell import CellOperator, CorrectorSet, compute_correctors
from .errors import HomogError
from .germ import Germ
from .lattice import make_field, make_lattice, make_symbol, gradient_symbol
from .pipeline import run_pipeline
from .scenarios import Scenario, load_scenario

__all__ = ["CellOperator", "CorrectorSet", "Germ", "HomogError", "Scenario",
           "compute_correctors", "gradient_symbol", "load_scenario", "make_field",
           "make_lattice", "make_symbol", "run_pipeline"]
__version__ = "0.1.0"
