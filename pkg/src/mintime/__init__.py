"""Certified lower bounds and feedback controls for minimal-time problems."""
from .kernels import BACKEND
from .oracle import CertificationError, CertResult, grid_certify, sample_oracle
from .polybasis import PolyBasis, Theta, basis_dimension, value_and_grad
from .problem import (ControlProblem, Region, Trajectory, get_problem, heuristic_trajectory,
                      make_brockett, make_line1d, make_regatta, make_zermelo)
from .feedback import ControllerConfig, simulate
from .sip import SolveReport, certified_lower_bound, cutting_plane, solve

__version__ = "0.1.0"
