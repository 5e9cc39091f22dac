"""Randomized low-rank preconditioners for strong-constraint 4D-Var."""
from .linalg import LinearMap, LowRankEVD, PCGReport, pcg_solve, woodbury_apply
from .prior import PriorCovariance, sample_background
from .sketching import SketchConfig, SketchReport, build_sketch
from .fourdvar import (AssimilationProblem, GNConfig, GNIterationLog, GNResult, Mode, cost,
                       gn_solve, gradient, misfit_operator)

__version__ = "0.1.0"
