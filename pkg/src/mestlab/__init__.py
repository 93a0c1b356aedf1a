"""Fixed-design M-estimation in moderate dimensions: solver, sensitivities, leave-one-out diagnostics and Monte Carlo harness."""
from importlib.metadata import PackageNotFoundError, version as _version

from .core import DesignMatrix, FitResult, SolverOptions, fit, newton_step, objective
from .exceptions import (EmptySample, FactorizationFailure, InvalidModel, InvalidSpec, MestlabError,
                         NoConvergence, NumericalFailure, RankDeficient, TooManyFailures)
from .kernels import BACKEND
from .losses import LossSpec, make_pseudo_l1, make_smoothed_huber, make_square, parse_loss

try:
    __version__ = _version("mestlab")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"
