"""Leave-one-predictor-out fits and the quantities built from them.

For coordinate ``j`` the reduced fit drops column ``X_j``. With residuals
``r = y - X_[j] beta_[j]``, ``D = diag psi'(r)`` and ``M = X_[j]^T D X_[j]``:

* ``h0 = psi(r)``, ``N_j = X_j^T h0 / sqrt(n)``
* ``xi_j = X_j^T (D - D X_[j] M^{-1} X_[j]^T D) X_j / n``
* ``b_j = N_j / (sqrt(n) xi_j)``
* ``h_{j,1,i} = (I - D X_[j] M^{-1} X_[j]^T) e_i``; its inner product with
  ``X_j`` is the ``i``-th entry of ``G_[j] X_j`` with
  ``G_[j] = I - X_[j] M^{-1} X_[j]^T D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import noise
from .core import DesignMatrix, FitResult, SolverOptions, _factor, fit
from .exceptions import InvalidSpec, NumericalFailure, TooManyFailures
from .losses import LossSpec
from .parallel import map_ordered
from .rng import STREAM_ERRORS


@dataclass
class LooResult:
    j: int
    beta_loo: np.ndarray
    r_loo: np.ndarray
    d_loo: np.ndarray
    h0: np.ndarray
    Nj: float
    xij: float
    bj: float
    grad_norm: float
    contrast: np.ndarray = field(repr=False)   # G_[j] X_j
    h1_norm: np.ndarray = field(repr=False)    # ||h_{j,1,i}||_2 for each i
    xj: np.ndarray = field(repr=False)

    @property
    def h0_ratio(self) -> float:
        nrm = float(np.linalg.norm(self.h0))
        return abs(float(self.h0 @ self.xj)) / nrm if nrm > 0 else 0.0

    @property
    def h1_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.abs(self.contrast) / self.h1_norm
        return np.where(self.h1_norm > 0, out, 0.0)

    @property
    def contrast_spread(self) -> float:
        """``||G_[j] X_j||_inf / ||G_[j] X_j||_2``: near 1 when one row dominates."""
        nrm = float(np.linalg.norm(self.contrast))
        return float(np.max(np.abs(self.contrast))) / nrm if nrm > 0 else 0.0


def _as_design(design) -> DesignMatrix:
    return design if isinstance(design, DesignMatrix) else DesignMatrix(design)


def fit_loo(design, y, loss: LossSpec, j: int, opts: SolverOptions | None = None,
            contrasts: bool = True) -> LooResult:
    dm = _as_design(design)
    X, n, p = dm.X, dm.n, dm.p
    if not 0 <= j < p:
        raise InvalidSpec(f"coordinate {j} out of range for p={p}")
    y = np.asarray(y, dtype=float)
    Xj = X[:, j]
    Xr = dm.drop(j)
    if p > 1:
        res = fit(Xr, y, loss, opts)
        beta, r, d, h0, gn = res.beta_hat, res.residuals, res.d_weights, res.psi_values, res.grad_norm
    else:
        beta = np.zeros(0)
        r = y.copy()
        _, h0, d, _ = loss.evaluate(r)
        gn = 0.0
    if p > 1:
        c = _factor((Xr.T * d) @ Xr)
        u = sla.cho_solve(c, Xr.T @ (d * Xj), check_finite=False)
        contrast = Xj - Xr @ u
    else:
        c = None
        contrast = Xj.copy()
    # X_j^T D G_[j] X_j = X_j^T (D - D X M^{-1} X^T D) X_j
    xij = float(Xj @ (d * contrast)) / n
    Nj = float(Xj @ h0) / math.sqrt(n)
    bj = Nj / (math.sqrt(n) * xij)
    if contrasts and p > 1:
        W = sla.cho_solve(c, Xr.T, check_finite=False)
        q = np.einsum("ij,ji->i", Xr, W)
        C = (Xr.T * d * d) @ Xr
        s = np.einsum("ij,ij->j", W, C @ W)
        h1_norm = np.sqrt(np.clip(1.0 - 2.0 * d * q + s, 0.0, None))
    else:
        h1_norm = np.ones(n)
    return LooResult(j, beta, r, d, h0, Nj, xij, bj, gn, contrast, h1_norm, Xj)


def loo_all(design, y, loss, coords=None, opts=None, threads: int = 1) -> list[LooResult]:
    dm = _as_design(design)
    coords = list(dm.Jn if coords is None else coords)
    return map_ordered(lambda j: fit_loo(dm, y, loss, j, opts), coords, threads)


@dataclass
class DeltaCReport:
    coords: list
    per_j_h0: np.ndarray
    per_ij_h1: np.ndarray
    delta_c: float
    h1_norm_max: float
    contrast_spread: np.ndarray


def delta_c(design, y, loss, Jn=None, opts=None, loos=None, threads: int = 1) -> DeltaCReport:
    """``Delta_C`` over ``Jn``: the largest normalised contrast of ``X_j`` against ``h_{j,0}`` and ``h_{j,1,i}``."""
    if loos is None:
        loos = loo_all(design, y, loss, Jn, opts, threads)
    h0 = np.array([l.h0_ratio for l in loos])
    h1 = np.array([float(l.h1_ratio.max()) for l in loos])
    return DeltaCReport(
        coords=[l.j for l in loos], per_j_h0=h0, per_ij_h1=h1,
        delta_c=float(max(h0.max(), h1.max())),
        h1_norm_max=float(max(l.h1_norm.max() for l in loos)),
        contrast_spread=np.array([l.contrast_spread for l in loos]),
    )


@dataclass
class BoundsReport:
    T: float
    E: float
    U: float
    U0: float
    K3: float
    lambda_plus: float
    lambda_minus: float
    delta_c: float
    bounds: dict
    full_fit: FitResult = field(repr=False, default=None)
    loos: list = field(repr=False, default=None)

    @property
    def all_pass(self) -> bool:
        return all(b["pass"] for b in self.bounds.values())

    def per_coord_pass(self, name: str) -> np.ndarray:
        return np.asarray(self.bounds[name]["per_coord_pass"])


def deterministic_bounds(design, y, loss: LossSpec, Jn=None, beta_star=None, error_model=None,
                         opts=None, threads: int = 1) -> BoundsReport:
    """Evaluate the four deterministic approximation bounds on one instance.

    (i) ``||beta_hat - beta*||``, (ii) ``|b_j|``, (iii) ``|beta_hat_j - b_j|``
    and (iv) ``max_i |R_i - r_{i,[j]}|``. Each computed quantity is compared
    with the bound plus a slack that accounts for the solver stopping at a
    nonzero gradient.

    The bounds concern the centred problem, so every fit here uses the
    response ``eps = y - X beta*``. By equivariance (i) and (iv) are unchanged,
    but ``b_j`` and the leave-one-out fits are not, and ``full_fit`` in the
    report is the centred fit.
    """
    dm = _as_design(design)
    X, n, p = dm.X, dm.n, dm.p
    coords = list(dm.Jn if Jn is None else Jn)
    y = np.asarray(y, dtype=float)
    beta_star = np.zeros(p) if beta_star is None else np.asarray(beta_star, dtype=float)
    eps = y - X @ beta_star

    full = fit(dm, eps, loss, opts)
    loos = loo_all(dm, eps, loss, coords, opts, threads)
    dc = delta_c(dm, eps, loss, coords, loos=loos).delta_c

    lam_p, lam_m = dm.lambda_plus, dm.lambda_minus
    K0, K1, K3 = loss.K0, loss.K1, loss.K3
    row_norms = np.linalg.norm(X, axis=1)
    col_norms = np.linalg.norm(X[:, coords], axis=0)
    T = max(row_norms.max(), col_norms.max()) / math.sqrt(n)
    rh, ps, _, _ = loss.evaluate(eps)
    E = float(rh.mean())
    Epsi = 0.0 if error_model is None else noise.expected_psi(error_model, loss)
    U = float(np.linalg.norm(X.T @ (ps - Epsi))) / n
    U0 = float(np.linalg.norm(X.sum(0) * Epsi)) / n

    # distance of each computed fit to its exact minimiser
    fit_err = full.grad_norm / (K0 * lam_m)
    loo_err = np.array([l.grad_norm for l in loos]) / (K0 * lam_m)
    slack = fit_err + loo_err + 1e-12
    sn = math.sqrt(n)

    b1 = (U + U0) / (K0 * lam_m)
    q1 = float(np.linalg.norm(full.beta_hat))

    b2 = math.sqrt(2 * K1) / (K0 * lam_m) * dc * math.sqrt(E) / sn
    q2 = np.array([abs(l.bj) for l in loos])
    # b_j is a function of the LOO fit only; perturbing beta_[j] moves N_j by at most K1 ||X_j|| ||X|| err
    s2 = loo_err * K1 * col_norms * math.sqrt(lam_p * n) / (sn * sn * K0 * lam_m) + 1e-12

    b3 = 2 * K1 ** 2 * K3 * lam_p * T / (K0 ** 4 * lam_m ** 3.5) * dc ** 3 * E / n
    q3 = np.array([abs(full.beta_hat[l.j] - l.bj) for l in loos])
    s3 = slack + s2

    b4 = (2 * K1 ** 2 * K3 * lam_p * T ** 2 * dc ** 3 * E / (K0 ** 4 * lam_m ** 3.5)
          + math.sqrt(2) * K1 * dc ** 2 * math.sqrt(E) / (K0 ** 1.5 * lam_m)) / sn
    q4 = np.array([float(np.max(np.abs(full.residuals - l.r_loo))) for l in loos])
    s4 = row_norms.max() * slack

    ok2, ok3, ok4 = q2 <= b2 + s2, q3 <= b3 + s3, q4 <= b4 + s4
    bounds = {
        "i": {"quantity": q1, "bound": b1, "slack": fit_err + 1e-12, "pass": bool(q1 <= b1 + fit_err + 1e-12)},
        "ii": {"quantity": float(q2.max()), "bound": b2, "slack": float(s2.max()),
               "pass": bool(ok2.all()), "per_coord": q2, "per_coord_pass": ok2},
        "iii": {"quantity": float(q3.max()), "bound": b3, "slack": float(s3.max()),
                "pass": bool(ok3.all()), "per_coord": q3, "per_coord_pass": ok3},
        "iv": {"quantity": float(q4.max()), "bound": b4, "slack": float(s4.max()),
               "pass": bool(ok4.all()), "per_coord": q4, "per_coord_pass": ok4},
    }
    return BoundsReport(T, E, U, U0, K3, lam_p, lam_m, dc, bounds, full, loos)


def trace_lower_bound(loss: LossSpec, n: int, p: int, min_var: float) -> float:
    """``K* n`` with ``K* = K0^4 / K1^2 ((n - p + 1) / n)^2 min Var(eps_i)``."""
    return loss.K0 ** 4 / loss.K1 ** 2 * ((n - p + 1) / n) ** 2 * min_var * n


@dataclass
class QjEstimate:
    j: int
    trace: float
    trace_se: float
    quad: float
    ratio: float
    ratio_se: float
    reps: int
    failures: int


def estimate_Qj(design, loss: LossSpec, error_model, j: int, reps: int = 200, seed=0,
                opts=None, threads: int = 1, min_reps: int = 200, max_fail: float = 0.01) -> QjEstimate:
    """Monte Carlo ``tr(Q_j)`` and ``X_j^T Q_j X_j / tr(Q_j)`` with ``Q_j = Cov(h_{j,0})``.

    Replication ``r`` uses errors from stream ``(seed, STREAM_ERRORS, r)``.
    """
    if reps < min_reps:
        raise InvalidSpec(f"estimate_Qj needs reps >= {min_reps}, got {reps}")
    dm = _as_design(design)
    n = dm.n

    def task(rep):
        eps = noise.draw(error_model, n, seed, STREAM_ERRORS, rep)
        try:
            return fit_loo(dm, eps, loss, j, opts, contrasts=False).h0
        except NumericalFailure:
            return None

    hs = [h for h in map_ordered(task, range(reps), threads) if h is not None]
    failures = reps - len(hs)
    if failures > max_fail * reps:
        raise TooManyFailures(f"{failures} of {reps} replications failed")
    H = np.array(hs)
    m = H.shape[0]
    C = H - H.mean(0)
    f = m / (m - 1.0)
    t_terms = f * np.einsum("ij,ij->i", C, C)
    q_terms = f * (C @ dm.X[:, j]) ** 2
    tr, quad = float(t_terms.mean()), float(q_terms.mean())
    ratio = quad / tr
    tr_se = float(t_terms.std(ddof=1) / math.sqrt(m))
    ratio_se = float((q_terms - ratio * t_terms).std(ddof=1) / (tr * math.sqrt(m)))
    return QjEstimate(j, tr, tr_se, quad, ratio, ratio_se, m, failures)
