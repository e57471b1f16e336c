"""Adaptive Crouzeix-Raviart eigensolver for -Lap u + b.grad u = lambda u."""
from .adaptive import AdaptiveConfig, ConvergenceHistory, ConvergenceRecord, mark, run, uniform_study
from .cr_space import CRSpace, CRSystem, assemble
from .eigensolver import EigenPair, SolverConfig, dense_reference, solve_dual, solve_primal
from .estimator import IndicatorField, local_indicators, subset_total
from .mesh import Mesh, build_lshape, build_structured_square, refine, uniform_refine

__all__ = [
    "AdaptiveConfig", "ConvergenceHistory", "ConvergenceRecord", "mark", "run", "uniform_study",
    "CRSpace", "CRSystem", "assemble",
    "EigenPair", "SolverConfig", "dense_reference", "solve_dual", "solve_primal",
    "IndicatorField", "local_indicators", "subset_total",
    "Mesh", "build_lshape", "build_structured_square", "refine", "uniform_refine",
]
__version__ = "0.1.0"
