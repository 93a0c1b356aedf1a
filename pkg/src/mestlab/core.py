"""Fixed-design M-estimation: design container, objective and damped Newton solver."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .exceptions import FactorizationFailure, InvalidSpec, NoConvergence, RankDeficient
from .losses import LossSpec

_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """An ``n x p`` design with the coordinates of interest ``Jn``.

    ``Jn`` holds 0-based column indices and defaults to every column except
    the intercept. When ``has_intercept`` is set, column 0 must be all ones.
    """

    X: np.ndarray
    has_intercept: bool = False
    Jn: tuple = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, order="C", copy=True)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InvalidSpec(f"design must be a 2-d matrix, got shape {X.shape}")
        n, p = X.shape
        if p < 1 or n < p:
            raise InvalidSpec(f"design needs n >= p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(X)):
            raise InvalidSpec("design contains non-finite entries")
        if self.has_intercept and not np.all(X[:, 0] == 1.0):
            raise InvalidSpec("has_intercept is set but column 0 is not all ones")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        first = 1 if self.has_intercept else 0
        if self.Jn is None:
            Jn = tuple(range(first, p))
        else:
            Jn = tuple(int(j) for j in np.atleast_1d(self.Jn))
        if not Jn:
            raise InvalidSpec("Jn must not be empty")
        if len(set(Jn)) != len(Jn):
            raise InvalidSpec(f"Jn has repeated indices: {Jn}")
        for j in Jn:
            if not 0 <= j < p:
                raise InvalidSpec(f"Jn index {j} out of range for p={p}")
            if self.has_intercept and j == 0:
                raise InvalidSpec("Jn must exclude the intercept column")
        object.__setattr__(self, "Jn", Jn)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def kappa(self) -> float:
        return self.p / self.n

    def column(self, j: int) -> np.ndarray:
        return self.X[:, j]

    def row(self, i: int) -> np.ndarray:
        return self.X[i]

    def drop(self, j: int) -> np.ndarray:
        """X with column ``j`` removed (``X_[j]``)."""
        return np.delete(self.X, j, axis=1)

    def with_coords(self, Jn) -> "DesignMatrix":
        return DesignMatrix(self.X, has_intercept=self.has_intercept, Jn=Jn)

    @cached_property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.X, compute_uv=False)

    @property
    def rank_ratio(self) -> float:
        s = self.singular_values
        return float(s[-1] / s[0]) if s[0] > 0 else 0.0

    @property
    def lambda_plus(self) -> float:
        return float(self.singular_values[0] ** 2 / self.n)

    @property
    def lambda_minus(self) -> float:
        return float(self.singular_values[-1] ** 2 / self.n)


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 200
    armijo: float = 1e-4
    min_step: float = 1e-12
    rank_tol: float = 1e-10
    check_rank: bool = True


@dataclass
class FitResult:
    beta_hat: np.ndarray
    residuals: np.ndarray
    d_weights: np.ndarray
    dtilde_weights: np.ndarray
    psi_values: np.ndarray
    grad_norm: float
    grad_scale: float
    iterations: int
    converged: bool
    objective: float
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta_hat.tolist(),
            "residuals": self.residuals.tolist(),
            "weights": {"d": self.d_weights.tolist(), "dtilde": self.dtilde_weights.tolist()},
            "grad_norm": self.grad_norm,
            "grad_scale": self.grad_scale,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective": self.objective,
            "trace": self.trace,
        }


def _matrix(design) -> np.ndarray:
    if isinstance(design, DesignMatrix):
        return design.X
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def check_rank(design, rank_tol: float = 1e-10) -> float:
    """Raise :class:`RankDeficient` unless ``sigma_min / sigma_max >= rank_tol``."""
    if isinstance(design, DesignMatrix):
        ratio = design.rank_ratio
    else:
        X = _matrix(design)
        if X.shape[1] == 0:
            return 1.0
        s = np.linalg.svd(X, compute_uv=False)
        ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    if not ratio >= rank_tol:
        raise RankDeficient(
            f"design is rank deficient: sigma_min/sigma_max = {ratio:.3e} < rank_tol = {rank_tol:g}",
            ratio=ratio,
        )
    return ratio


def objective(design, y, loss: LossSpec, beta) -> float:
    """Average loss ``(1/n) sum rho(y_i - x_i^T beta)``."""
    X = _matrix(design)
    r = np.asarray(y, dtype=float) - X @ np.asarray(beta, dtype=float)
    return float(np.mean(loss.rho(r)))


def _weighted_gram(X, d):
    return (X.T * d) @ X


def _factor(H):
    if not np.all(np.isfinite(H)):
        raise FactorizationFailure("X^T D X has non-finite entries")
    try:
        return sla.cho_factor(H, lower=False, check_finite=False)
    except np.linalg.LinAlgError as err:
        raise FactorizationFailure(
            "X^T D X is numerically singular; the loss curvature or design conditioning is violated"
        ) from err


def newton_step(design, y, loss: LossSpec, beta):
    """Newton direction and decrement at ``beta``.

    The direction solves ``(X^T D X) dir = X^T psi(y - X beta)``; the
    decrement is ``sqrt(g^T H^{-1} g)`` for the averaged gradient ``g`` and
    Hessian ``H = X^T D X / n``.
    """
    X = _matrix(design)
    n = X.shape[0]
    r = np.asarray(y, dtype=float) - X @ np.asarray(beta, dtype=float)
    _, ps, d1, _ = loss.evaluate(r)
    g = X.T @ ps / n
    c = _factor(_weighted_gram(X, d1) / n)
    direction = sla.cho_solve(c, g, check_finite=False)
    return direction, float(np.sqrt(max(g @ direction, 0.0)))


def fit(design, y, loss: LossSpec, opts: SolverOptions | None = None, beta0=None) -> FitResult:
    """Minimise ``(1/n) sum rho(y_i - x_i^T beta)`` by damped Newton.

    Converged when ``||X^T psi(R)||_2 / n <= tol * (1 + ||X^T psi(y)||_2 / n)``.
    Steps are backtracked (halving) until the Armijo condition holds.
    """
    opts = opts or SolverOptions()
    X = _matrix(design)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.shape != (n,):
        raise InvalidSpec(f"response has shape {y.shape}, expected ({n},)")
    if not np.all(np.isfinite(y)):
        raise InvalidSpec("response contains non-finite entries")
    if opts.check_rank and p > 0:
        check_rank(design, opts.rank_tol)

    if p == 0:
        rh, ps, d1, d2 = loss.evaluate(y)
        return FitResult(np.zeros(0), y.copy(), d1, d2, ps, 0.0, 1.0, 0, True, float(rh.mean()), [])

    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    R = y - X @ beta
    rh, ps, d1, d2 = loss.evaluate(R)
    F = float(rh.mean())
    if beta0 is None:
        scale = 1.0 + float(np.linalg.norm(X.T @ ps)) / n
    else:
        scale = 1.0 + float(np.linalg.norm(X.T @ loss.psi(y))) / n
    trace = []
    for it in range(opts.max_iter + 1):
        g = X.T @ ps / n
        gn = float(np.linalg.norm(g))
        if not (np.isfinite(gn) and np.isfinite(F)):
            raise NoConvergence(f"non-finite gradient or objective at iteration {it}", trace=trace)
        if gn <= opts.tol * scale:
            trace.append({"iter": it, "objective": F, "grad_norm": gn, "step": 0.0})
            return FitResult(beta, R, d1, d2, ps, gn, scale, it, True, F, trace)
        if it == opts.max_iter:
            trace.append({"iter": it, "objective": F, "grad_norm": gn, "step": 0.0})
            break
        c = _factor(_weighted_gram(X, d1) / n)
        direction = sla.cho_solve(c, g, check_finite=False)
        dec2 = float(g @ direction)
        Xd = X @ direction
        # below this decrement the objective cannot resolve progress; take pure Newton steps
        floor = 64.0 * _EPS * max(F, 1e-300)
        t = 1.0
        while True:
            R_new = R - t * Xd
            rh_new, ps_new, d1_new, d2_new = loss.evaluate(R_new)
            F_new = float(rh_new.mean())
            if F_new <= F - opts.armijo * t * dec2 or dec2 <= floor:
                break
            t *= 0.5
            if t < opts.min_step:
                trace.append({"iter": it, "objective": F, "grad_norm": gn, "step": t})
                raise NoConvergence(
                    f"line search failed at iteration {it} (grad_norm={gn:.3e})", trace=trace
                )
        trace.append({"iter": it, "objective": F, "grad_norm": gn, "step": t,
                      "decrement": float(np.sqrt(max(dec2, 0.0)))})
        beta = beta + t * direction
        R, rh, ps, d1, d2, F = R_new, rh_new, ps_new, d1_new, d2_new, F_new
    result = FitResult(beta, R, d1, d2, ps, gn, scale, opts.max_iter, False, F, trace)
    raise NoConvergence(
        f"no convergence after {opts.max_iter} iterations (grad_norm={gn:.3e})",
        trace=trace, result=result,
    )
