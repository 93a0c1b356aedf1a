"""Design generators and design-level diagnostics.

Families
--------
iid            entries drawn i.i.d. from ``dist``
elliptical     ``X_ij = zeta_i Z_ij`` with Z standard normal, zeta from ``factor_dist``
matrix_normal  ``L_Lambda G L_Sigma^T`` with G i.i.d. normal and Cholesky factors
partial_hadamard  p columns of a Sylvester Hadamard matrix (entries +-1)
anova          row i has a single 1 in the column of its group
fixed          matrix read from a CSV file

Entry distributions: ``gaussian``, ``t(df)``, ``rademacher``, ``uniform``
(uniform on +-sqrt(3), unit variance).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import noise
from .core import DesignMatrix, check_rank
from .exceptions import InvalidSpec, NumericalFailure, TooManyFailures
from .losses import LossSpec, a1_certificate
from .loo import fit_loo
from .parallel import map_ordered
from .rng import STREAM_COLUMNS, STREAM_DESIGN, STREAM_ERRORS, STREAM_FACTORS, substream

FAMILIES = ("iid", "elliptical", "matrix_normal", "partial_hadamard", "anova", "fixed")

_DIST = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def parse_dist(text: str):
    """``"t(2)"`` -> ``("t", 2.0)``; ``"gaussian"`` -> ``("gaussian", None)``."""
    m = _DIST.match(text or "")
    if not m:
        raise InvalidSpec(f"cannot parse distribution {text!r}")
    name = m.group(1).lower()
    arg = m.group(2)
    if name in ("normal", "gaussian"):
        return ("gaussian", None)
    if name in ("rademacher", "uniform"):
        return (name, None)
    if name == "t":
        try:
            df = float(arg)
        except (TypeError, ValueError):
            raise InvalidSpec(f"t distribution needs degrees of freedom, got {text!r}") from None
        if not df > 0:
            raise InvalidSpec(f"t degrees of freedom must be positive, got {df}")
        return ("t", df)
    raise InvalidSpec(f"unknown entry distribution {text!r}")


def _sample(dist, size, rng):
    name, arg = parse_dist(dist) if isinstance(dist, str) else dist
    if name == "gaussian":
        return rng.standard_normal(size)
    if name == "t":
        return rng.standard_t(arg, size)
    if name == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=size)
    if name == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
    raise InvalidSpec(f"unknown entry distribution {name!r}")


@dataclass
class DesignSpec:
    family: str = "iid"
    n: int = 100
    p: int = 50
    include_intercept: bool = False
    seed: int = 0
    dist: str = "gaussian"
    factor_dist: str = "gaussian"
    truncate: Optional[tuple] = None        # (lo, hi) quantiles of |zeta| for elliptical
    Lambda: object = "identity"
    Sigma: object = "identity"
    group_sizes: Optional[list] = None
    path: Optional[str] = None
    Jn: Optional[list] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown design family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "fixed":
            if not self.path:
                raise InvalidSpec("fixed design needs a path")
            return
        if self.family == "anova" and self.group_sizes is not None:
            sizes = [int(g) for g in self.group_sizes]
            if any(g <= 0 for g in sizes):
                raise InvalidSpec(f"anova group sizes must be positive, got {sizes}")
            self.group_sizes = sizes
            self.n, self.p = sum(sizes), len(sizes)
        self.n, self.p = int(self.n), int(self.p)
        if self.p < 1 or self.n < self.p:
            raise InvalidSpec(f"design needs n >= p >= 1, got n={self.n}, p={self.p}")
        if self.family == "partial_hadamard" and (self.n & (self.n - 1)) != 0:
            raise InvalidSpec(f"partial_hadamard needs n a power of 2, got {self.n}")
        if self.family == "anova":
            if self.group_sizes is None:
                raise InvalidSpec("anova design needs group_sizes")
            if self.include_intercept:
                raise InvalidSpec("anova design with an intercept is rank deficient")
        if self.truncate is not None:
            lo, hi = self.truncate
            if not 0 <= lo < hi <= 1:
                raise InvalidSpec(f"truncation quantiles must satisfy 0 <= lo < hi <= 1, got {self.truncate}")
        if self.family in ("iid", "elliptical"):
            parse_dist(self.dist)
            parse_dist(self.factor_dist)


def hadamard(n: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order n (a power of 2), integer entries."""
    if n < 1 or (n & (n - 1)) != 0:
        raise InvalidSpec(f"Hadamard order must be a power of 2, got {n}")
    H = np.ones((1, 1), dtype=np.int64)
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


def anova_design(group_sizes) -> np.ndarray:
    sizes = [int(g) for g in group_sizes]
    X = np.zeros((sum(sizes), len(sizes)))
    X[np.arange(X.shape[0]), np.repeat(np.arange(len(sizes)), sizes)] = 1.0
    return X


def _spd_root(M, dim, name):
    if isinstance(M, str):
        if M != "identity":
            raise InvalidSpec(f"{name} must be 'identity' or a matrix")
        return None
    M = np.asarray(M, dtype=float)
    if M.shape != (dim, dim):
        raise InvalidSpec(f"{name} must be {dim}x{dim}, got {M.shape}")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise InvalidSpec(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise InvalidSpec(f"{name} is not positive definite") from None


def generate(spec: DesignSpec, key=()) -> DesignMatrix:
    """Draw a design from ``spec``; identical specs give bit-identical matrices.

    ``key`` extends the stream path so experiments can draw many designs
    from one master seed.
    """
    fam = spec.family
    if fam == "fixed":
        from .io import read_matrix
        return DesignMatrix(read_matrix(spec.path), has_intercept=spec.include_intercept, Jn=spec.Jn)
    n, p = spec.n, spec.p
    k = p - 1 if spec.include_intercept else p
    rng = substream(spec.seed, STREAM_DESIGN, *key)
    if fam == "iid":
        Z = _sample(spec.dist, (n, k), rng)
    elif fam == "elliptical":
        Z = rng.standard_normal((n, k))
        zeta = _sample(spec.factor_dist, n, substream(spec.seed, STREAM_FACTORS, *key))
        if spec.truncate is not None:
            a, b = np.quantile(np.abs(zeta), spec.truncate)
            zeta = np.sign(zeta) * np.clip(np.abs(zeta), a, b)
        Z = zeta[:, None] * Z
    elif fam == "matrix_normal":
        Z = rng.standard_normal((n, k))
        La = _spd_root(spec.Lambda, n, "Lambda")
        Ls = _spd_root(spec.Sigma, k, "Sigma")
        if La is not None:
            Z = La @ Z
        if Ls is not None:
            Z = Z @ Ls.T
    elif fam == "partial_hadamard":
        H = hadamard(n)
        cols_rng = substream(spec.seed, STREAM_COLUMNS, *key)
        if spec.include_intercept:
            # column 0 of a Sylvester matrix is the constant column
            cols = 1 + cols_rng.choice(n - 1, size=k, replace=False)
        else:
            cols = cols_rng.choice(n, size=k, replace=False)
        Z = H[:, np.sort(cols)].astype(float)
    elif fam == "anova":
        Z = anova_design(spec.group_sizes)
    else:  # pragma: no cover
        raise InvalidSpec(fam)
    if spec.include_intercept:
        Z = np.hstack([np.ones((n, 1)), Z])
    return DesignMatrix(Z, has_intercept=spec.include_intercept, Jn=spec.Jn)


def _mat(design):
    return design.X if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)


def s_j(design, Jn=None) -> np.ndarray:
    """``||e_j^T (X^T X)^{-1} X^T||_inf / ||.||_2`` for each ``j`` in ``Jn``."""
    X = _mat(design)
    check_rank(design)
    if Jn is None:
        Jn = design.Jn if isinstance(design, DesignMatrix) else range(X.shape[1])
    Jn = list(Jn)
    # rows of the pseudo-inverse via QR: (X^T X)^{-1} X^T = R^{-1} Q^T
    Q, R = np.linalg.qr(X)
    E = np.zeros((X.shape[1], len(Jn)))
    E[Jn, np.arange(len(Jn))] = 1.0
    rows = sla.solve_triangular(R, E, trans="T", lower=False)  # R^{-T} e_j
    A = Q @ rows                                              # columns are (e_j^T R^{-1} Q^T)^T
    return np.abs(A).max(0) / np.linalg.norm(A, axis=0)


def sigma_hat_J(design, Jn) -> np.ndarray:
    """``X_J^T (I - P_{J^c}) X_J / n`` with P the projection onto span(X_{J^c})."""
    X = _mat(design)
    n, p = X.shape
    Jn = list(Jn)
    comp = [c for c in range(p) if c not in set(Jn)]
    XJ = X[:, Jn]
    if comp:
        Xc = X[:, comp]
        XJ = XJ - Xc @ (np.linalg.pinv(Xc) @ XJ)
    return XJ.T @ XJ / n


def lambda_tilde(design, Jn):
    ev = np.linalg.eigvalsh(sigma_hat_J(design, Jn))
    return float(ev[-1]), float(ev[0])


@dataclass
class Thresholds:
    lambda_minus_min: float = 0.01
    lambda_plus_log_factor: float = 10.0     # lambda_+ <= factor * log n
    a4_ratio_factor: float = 0.1             # ratio >= factor * min Var(eps)
    delta_c_factor: float = 6.0              # E Delta_C^8 <= (factor sqrt(log n))^8
    spread_factor: float = 3.0               # contrast spread <= factor sqrt(log n / n)
    se_warn: float = 0.2


@dataclass
class AssumptionReport:
    n: int
    p: int
    Jn: list
    lambda_plus: float
    lambda_minus: float
    lambda_tilde_plus: float
    lambda_tilde_minus: float
    a4_ratio_per_j: np.ndarray
    a4_ratio_se: np.ndarray
    qj_trace: np.ndarray
    delta_c_moment: float
    delta_c_moment_se: float
    delta_c_max: float
    contrast_spread: np.ndarray
    sj: np.ndarray
    verdicts: dict
    notes: list = field(default_factory=list)
    reps: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def _verdict(ok, value, threshold, rule, warn=False):
    return {"value": value, "threshold": threshold, "rule": rule,
            "verdict": "fail" if not ok else ("warn" if warn else "pass")}


def check_assumptions(design, loss: LossSpec, error_model, Jn=None, reps: int = 200, seed=0,
                      thresholds: Thresholds | None = None, threads: int = 1,
                      opts=None) -> AssumptionReport:
    """Diagnose A1-A5 (and A3*) for a fixed design.

    One Monte Carlo pass over ``reps`` error draws feeds both the A4 ratio
    (from the covariance of ``h_{j,0}``) and the moment ``E Delta_C^8``.
    Verdict thresholds are heuristics; see :class:`Thresholds`.
    """
    th = thresholds or Thresholds()
    dm = design if isinstance(design, DesignMatrix) else DesignMatrix(design)
    n, p = dm.n, dm.p
    Jn = list(dm.Jn if Jn is None else Jn)
    if reps < 2:
        raise InvalidSpec(f"check_assumptions needs reps >= 2, got {reps}")
    notes = []
    logn = math.log(n)

    lam_p, lam_m = dm.lambda_plus, dm.lambda_minus
    lt_p, lt_m = lambda_tilde(dm, Jn)
    sj_vals = s_j(dm, Jn)

    def task(rep):
        eps = noise.draw(error_model, n, seed, STREAM_ERRORS, rep)
        try:
            loos = [fit_loo(dm, eps, loss, j, opts) for j in Jn]
        except NumericalFailure:
            return None
        h0 = [l.h0 for l in loos]
        dc = max(max(l.h0_ratio for l in loos), max(float(l.h1_ratio.max()) for l in loos))
        return h0, dc, [l.contrast_spread for l in loos]

    results = [r for r in map_ordered(task, range(reps), threads) if r is not None]
    failures = reps - len(results)
    if failures > 0.02 * reps:
        raise TooManyFailures(f"{failures} of {reps} replications failed")
    m = len(results)
    dcs = np.array([r[1] for r in results])
    # per-coordinate mean over draws; the verdict uses the worst coordinate
    spread = np.array([r[2] for r in results]).mean(0)

    ratios, ratio_se, traces = [], [], []
    f = m / (m - 1.0)
    for k, j in enumerate(Jn):
        H = np.array([r[0][k] for r in results])
        C = H - H.mean(0)
        t_terms = f * np.einsum("ij,ij->i", C, C)
        q_terms = f * (C @ dm.X[:, j]) ** 2
        tr = float(t_terms.mean())
        ratio = float(q_terms.mean()) / tr if tr > 0 else 0.0
        se = float((q_terms - ratio * t_terms).std(ddof=1) / (tr * math.sqrt(m))) if tr > 0 else math.inf
        ratios.append(ratio)
        ratio_se.append(se)
        traces.append(tr)
    ratios, ratio_se = np.array(ratios), np.array(ratio_se)
    dc8 = dcs ** 8
    dc8_mean = float(dc8.mean())
    dc8_se = float(dc8.std(ddof=1) / math.sqrt(m))

    verdicts = {}
    cert = a1_certificate(loss)
    verdicts["A1"] = _verdict(cert["ok"], {"K0": loss.K0, "K1": loss.K1, "K2": loss.K2},
                              None, "psi' in [K0, K1] and |psi''| <= K2 sqrt(psi') on a dense grid")
    verdicts["A2"] = _verdict(error_model.in_a2, {"c1": error_model.c1, "c2": error_model.c2}, None,
                              "errors are smooth transforms of standard normals")
    if not error_model.in_a2:
        notes.append(f"error model {error_model.describe()} lies outside A2 (theory gap)")
    a3_ok = lam_m >= th.lambda_minus_min and lam_p <= th.lambda_plus_log_factor * logn
    verdicts["A3"] = _verdict(a3_ok, {"lambda_plus": lam_p, "lambda_minus": lam_m},
                              {"lambda_minus": th.lambda_minus_min,
                               "lambda_plus": th.lambda_plus_log_factor * logn},
                              "lambda_- >= lambda_minus_min and lambda_+ <= factor log n")
    a3s_ok = lt_m >= th.lambda_minus_min and lt_p <= th.lambda_plus_log_factor * logn
    verdicts["A3*"] = _verdict(a3s_ok, {"lambda_tilde_plus": lt_p, "lambda_tilde_minus": lt_m},
                               verdicts["A3"]["threshold"], "same thresholds on Sigma_hat_Jn")
    min_var = error_model.min_var
    if min_var is None:
        min_var = float(np.var(noise.draw(error_model, 100_000, seed, STREAM_ERRORS, reps + 1)))
        notes.append("min Var(eps) unavailable; using an empirical variance")
    a4_thr = th.a4_ratio_factor * min_var
    k4 = int(np.argmin(ratios))
    verdicts["A4"] = _verdict(
        ratios[k4] >= a4_thr, float(ratios[k4]), a4_thr, "min_j X_j^T Q_j X_j / tr(Q_j) >= factor min Var",
        warn=ratio_se[k4] > th.se_warn * abs(ratios[k4]),
    )
    dc_thr = (th.delta_c_factor * math.sqrt(logn)) ** 8
    verdicts["A5"] = _verdict(dc8_mean <= dc_thr, dc8_mean, dc_thr, "E Delta_C^8 <= (factor sqrt(log n))^8",
                              warn=dc8_se > th.se_warn * dc8_mean)
    sp_thr = th.spread_factor * math.sqrt(logn / n)
    verdicts["A5_spread"] = _verdict(
        float(spread.max()) <= sp_thr, float(spread.max()), sp_thr,
        "max_j mean ||G_[j] X_j||_inf / ||G_[j] X_j||_2 <= factor sqrt(log n / n)",
    )
    if not (verdicts["A5"]["verdict"] != "fail" and verdicts["A5_spread"]["verdict"] != "fail"):
        notes.append("A5 flag raised: contrasts of X_j concentrate on few rows")
    return AssumptionReport(
        n=n, p=p, Jn=Jn, lambda_plus=lam_p, lambda_minus=lam_m, lambda_tilde_plus=lt_p,
        lambda_tilde_minus=lt_m, a4_ratio_per_j=ratios, a4_ratio_se=ratio_se,
        qj_trace=np.array(traces), delta_c_moment=dc8_mean, delta_c_moment_se=dc8_se,
        delta_c_max=float(dcs.max()), contrast_spread=spread, sj=sj_vals, verdicts=verdicts,
        notes=notes, reps=m, failures=failures,
    )
