"""Derivatives of the M-estimator with respect to the error vector.

With ``A = (X^T D X)^{-1} X^T D`` (``D = diag psi'(R)``):

* gradient: ``d beta_hat / d eps^T = A``
* ``G = I - X A``
* Hessian of coordinate ``j``: ``G^T diag(a_j) G`` with
  ``a_j = e_j^T (X^T D X)^{-1} X^T Dtilde`` and ``Dtilde = diag psi''(R)``.

:func:`sopi_moments` turns these into Monte Carlo estimates of the fourth
moment quantities that drive the second-order Poincare normality bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import noise
from .core import DesignMatrix, FitResult, SolverOptions, _factor, _matrix, fit
from .exceptions import InvalidSpec, NumericalFailure, TooManyFailures
from .losses import LossSpec
from .parallel import map_ordered
from .rng import STREAM_ERRORS, substream


def _solve_gram(X, fit_result: FitResult, rhs_weights):
    """``(X^T D X)^{-1} X^T diag(w)`` as a p x n array."""
    d = fit_result.d_weights
    c = _factor((X.T * d) @ X)
    return sla.cho_solve(c, X.T * rhs_weights, check_finite=False)


def gradient_beta(fit_result: FitResult, design) -> np.ndarray:
    X = _matrix(design)
    return _solve_gram(X, fit_result, fit_result.d_weights)


def g_matrix(fit_result: FitResult, design, grad=None) -> np.ndarray:
    X = _matrix(design)
    if grad is None:
        grad = gradient_beta(fit_result, design)
    G = -(X @ grad)
    G[np.diag_indices_from(G)] += 1.0
    return G


def _hessian_weights(X, fit_result, j):
    d = fit_result.d_weights
    c = _factor((X.T * d) @ X)
    e = np.zeros(X.shape[1])
    e[j] = 1.0
    row = sla.cho_solve(c, e, check_finite=False)
    return (X @ row) * fit_result.dtilde_weights


def hessian_beta_j(fit_result: FitResult, design, j: int, G=None) -> np.ndarray:
    X = _matrix(design)
    if G is None:
        G = g_matrix(fit_result, design)
    a = _hessian_weights(X, fit_result, j)
    return G.T @ (a[:, None] * G)


def opnorm_power(H: np.ndarray, iters: int = 50, tol: float = 1e-8, rng=None) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration."""
    n = H.shape[0]
    if not np.any(H):
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = H @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return est
        v = w / nw
        if abs(nw - est) <= tol * nw:
            return nw
        est = nw
    return est


def hessian_opnorms(fit_result, design, coords=None, iters: int = 50, tol: float = 1e-8):
    X = _matrix(design)
    p = X.shape[1]
    coords = range(p) if coords is None else coords
    if not np.any(fit_result.dtilde_weights):
        return np.zeros(len(list(coords)))
    G = g_matrix(fit_result, design)
    out = []
    for j in coords:
        H = hessian_beta_j(fit_result, design, j, G=G)
        out.append(opnorm_power(H, iters, tol, rng=np.random.default_rng(j)))
    return np.array(out)


def sopi_bound(moments, c1: float, c2: float, var_betaj: float) -> float:
    """``2 sqrt(5) (c1 c2 kappa0 + c1^3 kappa1 kappa2) / Var``.

    ``moments`` is a ``(kappa0, kappa1, kappa2, ...)`` sequence or a mapping.
    """
    if not var_betaj > 0:
        raise InvalidSpec(f"variance must be positive, got {var_betaj}")
    if isinstance(moments, dict):
        k0, k1, k2 = moments["kappa0"], moments["kappa1"], moments["kappa2"]
    else:
        k0, k1, k2 = moments[0], moments[1], moments[2]
    return 2.0 * math.sqrt(5.0) * (c1 * c2 * k0 + c1 ** 3 * k1 * k2) / var_betaj


@dataclass
class SensitivityReport:
    coords: list
    reps: int
    kappa0: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    Mj: np.ndarray
    var_hat: np.ndarray
    sopi_bound: np.ndarray
    se: dict
    bound_checks: dict
    failures: int
    grad: np.ndarray | None = None
    hessian_opnorms: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def rows(self):
        for k, j in enumerate(self.coords):
            yield {
                "j": j + 1, "kappa0": self.kappa0[k], "kappa1": self.kappa1[k],
                "kappa2": self.kappa2[k], "Mj": self.Mj[k], "var_hat": self.var_hat[k],
                "sopi_bound": self.sopi_bound[k],
                "se_kappa0": self.se["kappa0"][k], "se_kappa1": self.se["kappa1"][k],
                "se_kappa2": self.se["kappa2"][k], "se_Mj": self.se["Mj"][k],
            }


def _one_draw(X, loss, model, coords, seed, rep, opts, need_hessian):
    eps = noise.draw(model, X.shape[0], seed, STREAM_ERRORS, rep)
    res = fit(X, eps, loss, opts)
    grad = gradient_beta(res, X)
    sqrt_d = np.sqrt(res.d_weights)
    sub = grad[coords]
    g2 = np.einsum("ij,ij->i", sub, sub)
    g4 = np.sum(sub ** 4, axis=1)
    # e_j^T (X^T D X)^{-1} X^T D^{1/2} = grad_j / sqrt(d)
    m_inf = np.max(np.abs(sub / sqrt_d), axis=1)
    if need_hessian:
        hop = hessian_opnorms(res, X, coords)
    else:
        hop = np.zeros(len(coords))
    return res.beta_hat[coords], g2, g4, hop, m_inf


def sopi_moments(design, loss: LossSpec, error_model, coords=None, reps: int = 500, seed=0,
                 opts: SolverOptions | None = None, threads: int = 1, max_fail: float = 0.01,
                 min_reps: int = 100) -> SensitivityReport:
    """Monte Carlo estimates of ``kappa0, kappa1, kappa2, M_j`` over fresh error draws.

    Errors for replication ``r`` come from stream ``(seed, STREAM_ERRORS, r)``
    and the response is ``y = eps`` (the estimator is equivariant in beta*).
    Every draw is also checked against the deterministic per-draw bounds.
    """
    if reps < min_reps:
        raise InvalidSpec(f"sopi_moments needs reps >= {min_reps}, got {reps}")
    dm = design if isinstance(design, DesignMatrix) else DesignMatrix(design)
    X = dm.X
    n = dm.n
    coords = list(dm.Jn if coords is None else coords)
    for j in coords:
        if not 0 <= j < dm.p:
            raise InvalidSpec(f"coordinate {j} out of range for p={dm.p}")
    opts = opts or SolverOptions()
    need_hessian = loss.K2 > 0

    def task(rep):
        try:
            return _one_draw(X, loss, error_model, coords, seed, rep, opts, need_hessian)
        except NumericalFailure:
            return None

    results = map_ordered(task, range(reps), threads)
    good = [r for r in results if r is not None]
    failures = reps - len(good)
    if failures > max_fail * reps:
        raise TooManyFailures(f"{failures} of {reps} replications failed")
    beta, g2, g4, hop, m_inf = (np.array(a) for a in zip(*good))
    m = len(good)

    A, B, C = g4.mean(0), (g2 ** 2).mean(0), (hop ** 4).mean(0)
    kappa0, kappa1, kappa2 = np.sqrt(A), B ** 0.25, C ** 0.25
    Mj = m_inf.mean(0)
    sd = lambda a: a.std(0, ddof=1) / math.sqrt(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = {
            "kappa0": np.where(kappa0 > 0, sd(g4) / (2 * kappa0), 0.0),
            "kappa1": np.where(kappa1 > 0, sd(g2 ** 2) / (4 * kappa1 ** 3), 0.0),
            "kappa2": np.where(kappa2 > 0, sd(hop ** 4) / (4 * kappa2 ** 3), 0.0),
            "Mj": sd(m_inf),
        }
    var_hat = beta.var(0, ddof=1)

    base = n * loss.K0 * dm.lambda_minus
    slack = 1.0 + 1e-9
    bound_g2 = loss.K1 / base
    bound_g4 = loss.K1 ** 2 * m_inf / base ** 1.5
    bound_h4 = loss.K2 ** 4 * (loss.K1 / loss.K0) ** 4 * m_inf / base ** 1.5
    checks = {
        "grad_norm_sq": int(np.count_nonzero(g2 > bound_g2 * slack)),
        "grad_fourth": int(np.count_nonzero(g4 > bound_g4 * slack)),
        "hessian_fourth": int(np.count_nonzero(hop ** 4 > bound_h4 * slack)),
        "draws": m,
    }

    if error_model.is_transform:
        bound = np.array([
            sopi_bound((kappa0[k], kappa1[k], kappa2[k]), error_model.c1, error_model.c2, var_hat[k])
            if var_hat[k] > 0 else math.nan
            for k in range(len(coords))
        ])
    else:
        bound = np.full(len(coords), math.nan)
    return SensitivityReport(coords, m, kappa0, kappa1, kappa2, Mj, var_hat, bound, se, checks,
                             failures)
