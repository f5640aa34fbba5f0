"""Sparse minimization over vector measures: PDAP, GCG and SPINAT(l)."""

from .measure import DiscreteMeasure, Domain, lump, prune, tv_norm
from .objective import LinearCost, NormBall, ProblemSpec, QuadraticLoss
from .operator import HelmholtzKernel
from .solver import SolverConfig, run

__all__ = [
    "DiscreteMeasure", "Domain", "HelmholtzKernel", "LinearCost", "NormBall", "ProblemSpec",
    "QuadraticLoss", "SolverConfig", "lump", "prune", "run", "tv_norm",
]
