"""Monte Carlo experiments: interval coverage, KS regime comparison, jackknife.

Randomness is keyed, never sequential:

* design for cell ``n``, outer rep ``o``: ``(seed, STREAM_DESIGN, n, o)``
* errors for block ``b``, inner rep ``i``: ``(seed, STREAM_ERRORS, n, o, b, i)``

so results do not depend on the thread count or task order.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels, noise
from .core import DesignMatrix, SolverOptions, fit
from .designs import DesignSpec, generate
from .exceptions import EmptySample, InvalidSpec, NumericalFailure, TooManyFailures
from .io import sha256_file, write_json, write_table
from .losses import LossSpec, make_smoothed_huber, parse_loss
from .parallel import map_ordered
from .rng import STREAM_ERRORS

MAX_FAIL_FRACTION = 0.02


@dataclass
class ExperimentConfig:
    design_spec: DesignSpec = field(default_factory=DesignSpec)
    error_model: noise.ErrorModel = field(default_factory=noise.gaussian)
    loss: LossSpec = field(default_factory=make_smoothed_huber)
    n_list: list = field(default_factory=lambda: [100, 200, 400, 800])
    kappa: float = 0.5
    outer_reps: int = 50
    inner_reps: int = 300
    coords: list = field(default_factory=lambda: [0])
    alpha: float = 0.05
    bonferroni: bool = False
    master_seed: int = 0
    threads: int = 1
    # KS comparison
    n0: int = 50
    kappas: list = field(default_factory=lambda: [0.5, 0.8])
    K: int = 100
    seeds: list = field(default_factory=lambda: list(range(20)))

    def p_of(self, n: int, kappa: float | None = None) -> int:
        return int(math.floor((self.kappa if kappa is None else kappa) * n))

    def validate(self) -> None:
        if not 0 < self.kappa < 1:
            raise InvalidSpec(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.inner_reps < 30:
            raise InvalidSpec(f"inner_reps must be >= 30, got {self.inner_reps}")
        if self.outer_reps < 1:
            raise InvalidSpec(f"outer_reps must be >= 1, got {self.outer_reps}")
        if not 0 < self.alpha <= 1:
            raise InvalidSpec(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.coords:
            raise InvalidSpec("coords must not be empty")
        if len(set(self.coords)) != len(self.coords):
            raise InvalidSpec(f"coords has duplicates: {self.coords}")
        for n in self.n_list:
            p = self.p_of(n)
            if p < 1:
                raise InvalidSpec(f"floor(kappa * n) = 0 for n={n}")
            if max(self.coords) >= p or min(self.coords) < 0:
                raise InvalidSpec(f"coords {[c + 1 for c in self.coords]} exceed p={p} at n={n}")

    def echo(self) -> dict:
        ds = dataclasses.asdict(self.design_spec)
        return {
            "design": {k: (v if not isinstance(v, np.ndarray) else v.tolist()) for k, v in ds.items()},
            "errors": self.error_model.describe(), "loss": str(self.loss),
            "n_list": list(self.n_list), "kappa": self.kappa, "outer_reps": self.outer_reps,
            "inner_reps": self.inner_reps, "coords": [c + 1 for c in self.coords],
            "alpha": self.alpha, "bonferroni": self.bonferroni, "seed": self.master_seed,
            "n0": self.n0, "kappas": list(self.kappas), "K": self.K, "seeds": list(self.seeds),
        }


def z_quantile(alpha: float, m: int = 1) -> float:
    """``z_{1 - alpha / (2m)}``; zero when ``alpha = 1`` and ``m = 1``."""
    return float(stats.norm.ppf(1.0 - alpha / (2.0 * m)))


def _design_for(cfg: ExperimentConfig, n: int, p: int, key) -> DesignMatrix:
    spec = dataclasses.replace(cfg.design_spec, n=n, p=p, seed=cfg.master_seed, Jn=None)
    return generate(spec, key=key)


def _block_betas(dm: DesignMatrix, cfg: ExperimentConfig, key, coord: int, reps: int, opts):
    """``beta_hat[coord]`` over ``reps`` error draws; NaN marks a failed fit."""
    out = np.empty(reps)
    for i in range(reps):
        eps = noise.draw(cfg.error_model, dm.n, cfg.master_seed, STREAM_ERRORS, *key, i)
        try:
            out[i] = fit(dm, eps, cfg.loss, opts).beta_hat[coord]
        except NumericalFailure:
            out[i] = np.nan
    return out


@dataclass
class CoverageCell:
    n: int
    p: int
    per_design_coverage: np.ndarray     # outer x coords
    sd: np.ndarray                      # outer x coords
    min_coverage: np.ndarray            # outer
    bonferroni_coverage: np.ndarray     # outer (NaN unless bonferroni)
    bonferroni_marginal: np.ndarray     # outer x coords
    simultaneous_unadjusted: np.ndarray  # outer
    failures: int
    fits: int

    @property
    def valid(self) -> bool:
        return self.failures <= MAX_FAIL_FRACTION * self.fits

    def summary(self) -> dict:
        cov = self.per_design_coverage
        q = np.nanquantile(cov, [0.25, 0.5, 0.75])
        return {
            "n": self.n, "p": self.p, "mean_coverage": float(np.nanmean(cov)),
            "q25": float(q[0]), "median": float(q[1]), "q75": float(q[2]),
            "mean_min_coverage": float(np.nanmean(self.min_coverage)),
            "mean_bonferroni_coverage": float(np.nanmean(self.bonferroni_coverage))
            if np.any(np.isfinite(self.bonferroni_coverage)) else float("nan"),
            "failures": self.failures, "fits": self.fits, "valid": self.valid,
        }


@dataclass
class CoverageReport:
    config: ExperimentConfig
    cells: list
    runtime: float = 0.0

    @property
    def mean_coverage(self) -> float:
        return float(np.nanmean(np.concatenate([c.per_design_coverage.ravel() for c in self.cells])))

    def rows(self):
        cfg = self.config
        fam, err = cfg.design_spec.family, cfg.error_model.describe()
        for c in self.cells:
            for o in range(c.per_design_coverage.shape[0]):
                for k, j in enumerate(cfg.coords):
                    yield {
                        "family": fam, "errors": err, "n": c.n, "p": c.p, "kappa": cfg.kappa,
                        "design_rep": o, "coord": j + 1,
                        "coverage": c.per_design_coverage[o, k], "sd": c.sd[o, k],
                        "bonferroni_marginal": c.bonferroni_marginal[o, k],
                        "min_coverage": c.min_coverage[o],
                        "bonferroni_coverage": c.bonferroni_coverage[o],
                    }


def run_coverage(cfg: ExperimentConfig) -> CoverageReport:
    """Empirical coverage of ``beta_hat_j +- z sd_j`` for the true value 0.

    Each design draws one independent block of ``inner_reps`` error vectors
    per coordinate; ``sd_j`` is the sample standard deviation (ddof=1) of
    ``beta_hat_j`` over its block. With ``bonferroni`` set, the simultaneous
    coverage pairs the ``k``-th draw of every block.
    """
    cfg.validate()
    t0 = time.perf_counter()
    opts = SolverOptions()
    m = len(cfg.coords)
    z = z_quantile(cfg.alpha)
    zb = z_quantile(cfg.alpha, m)
    cells = []
    for n in cfg.n_list:
        p = cfg.p_of(n)
        designs = [_design_for(cfg, n, p, (n, o)) for o in range(cfg.outer_reps)]
        tasks = [(o, b) for o in range(cfg.outer_reps) for b in range(m)]
        blocks = map_ordered(
            lambda t: _block_betas(designs[t[0]], cfg, (n, t[0], t[1]), cfg.coords[t[1]],
                                   cfg.inner_reps, opts),
            tasks, cfg.threads,
        )
        B = np.array(blocks).reshape(cfg.outer_reps, m, cfg.inner_reps)
        failures = int(np.count_nonzero(np.isnan(B)))
        ok = ~np.isnan(B)
        cnt = ok.sum(2)
        if np.any(cnt < 2):
            raise TooManyFailures(f"a block at n={n} has fewer than two successful fits")
        sd = np.nanstd(B, axis=2, ddof=1)
        absB = np.abs(B)
        with np.errstate(invalid="ignore"):
            inside = absB <= z * sd[:, :, None]
            inside_b = absB <= zb * sd[:, :, None]
        cov = np.where(ok, inside, False).sum(2) / cnt
        cov_b = np.where(ok, inside_b, False).sum(2) / cnt
        all_ok = ok.all(1)
        n_all = np.maximum(all_ok.sum(1), 1)
        simul_unadj = (inside.all(1) & all_ok).sum(1) / n_all
        if cfg.bonferroni:
            simul = (inside_b.all(1) & all_ok).sum(1) / n_all
        else:
            simul = np.full(cfg.outer_reps, np.nan)
        cell = CoverageCell(n, p, cov, sd, cov.min(1), simul, cov_b, simul_unadj,
                            failures, B.size)
        if not cell.valid:
            raise TooManyFailures(f"{failures} of {B.size} fits failed at n={n}")
        cells.append(cell)
    return CoverageReport(cfg, cells, time.perf_counter() - t0)


def two_sample_ks(a, b):
    """``(sqrt(K/2) * sup|F_a - F_b|, sup|F_a - F_b|)``.

    The scaled statistic uses ``K = len(a)`` when the sizes agree; for
    unequal sizes it uses the usual ``sqrt(n m / (n + m))`` factor.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("two_sample_ks needs non-empty samples")
    d = float(kernels.sup_distance_sorted(a, b))
    if a.size == b.size:
        scale = math.sqrt(a.size / 2.0)
    else:
        scale = math.sqrt(a.size * b.size / (a.size + b.size))
    return scale * d, d


@dataclass
class KsReport:
    rows: list
    samples: dict = field(repr=False)
    runtime: float = 0.0

    def fraction_ks2_smaller(self, kappa=None) -> float:
        sel = [r for r in self.rows if kappa is None or r["kappa"] == kappa]
        return float(np.mean([r["ks2"] < r["ks1"] for r in sel]))


def _scaled_beta1(dm, cfg, key, K, opts):
    b = _block_betas(dm, cfg, key, 0, K, opts)
    if np.isnan(b).sum() > MAX_FAIL_FRACTION * K:
        raise TooManyFailures(f"too many failed fits for key {key}")
    return math.sqrt(dm.n) * b[~np.isnan(b)]


def run_ks_comparison(cfg: ExperimentConfig) -> KsReport:
    """Compare p-fixed and p/n-fixed approximations of the law of ``beta_hat_1``.

    Per seed and kappa: X0 is ``n0 x kappa n0``, X1 is ``n x kappa n0`` and X2
    is ``n x kappa n`` with ``n = n_list[0]``. Each is drawn once and held
    fixed over K error draws. Samples are ``sqrt(n_design) beta_hat_1`` so
    that the three laws are on a common scale. X1 and X2 share error draws.
    """
    if cfg.K < 2:
        raise InvalidSpec(f"K must be >= 2, got {cfg.K}")
    n0, n = cfg.n0, cfg.n_list[0]
    for kap in cfg.kappas:
        if not 0 < kap < 1 or math.floor(kap * n0) < 1:
            raise InvalidSpec(f"kappa={kap} gives an empty design at n0={n0}")
        if n <= n0:
            raise InvalidSpec(f"large n ({n}) must exceed n0 ({n0})")
    t0 = time.perf_counter()
    opts = SolverOptions()
    tasks = [(s, ki) for s in cfg.seeds for ki in range(len(cfg.kappas))]

    def task(t):
        s, ki = t
        kap = cfg.kappas[ki]
        p0, p2 = int(math.floor(kap * n0)), int(math.floor(kap * n))
        local = dataclasses.replace(cfg, master_seed=int(s))
        X0 = _design_for(local, n0, p0, (ki, 0))
        X1 = _design_for(local, n, p0, (ki, 1))
        X2 = _design_for(local, n, p2, (ki, 2))
        b0 = _scaled_beta1(X0, local, (ki, 0), cfg.K, opts)
        b1 = _scaled_beta1(X1, local, (ki, 1), cfg.K, opts)
        b2 = _scaled_beta1(X2, local, (ki, 1), cfg.K, opts)
        ks1, d1 = two_sample_ks(b0, b1)
        ks2, d2 = two_sample_ks(b0, b2)
        row = {"seed": int(s), "kappa": kap, "n0": n0, "n": n, "p0": p0, "p2": p2,
               "ks1": ks1, "ks2": ks2, "sup1": d1, "sup2": d2}
        return row, (b0, b1, b2)

    res = map_ordered(task, tasks, cfg.threads)
    rows = [r for r, _ in res]
    samples = {(r["seed"], r["kappa"]): s for r, s in res}
    return KsReport(rows, samples, time.perf_counter() - t0)


def jackknife_variance(design, y, loss: LossSpec, j: int, opts: SolverOptions | None = None,
                       threads: int = 1) -> float:
    """Delete-one-observation jackknife variance of ``beta_hat_j``.

    ``(n - 1) / n * sum_i (beta_(i),j - mean)^2``; each refit is warm-started
    at the full-sample estimate. Known to be conservative in this regime.
    """
    X = design.X if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 3:
        raise InvalidSpec(f"jackknife needs n >= 3, got {n}")
    if not 0 <= j < p:
        raise InvalidSpec(f"coordinate {j} out of range for p={p}")
    full = fit(X, y, loss, opts)

    def refit(i):
        idx = np.r_[0:i, i + 1:n]
        return fit(X[idx], y[idx], loss, opts, beta0=full.beta_hat).beta_hat[j]

    b = np.array(map_ordered(refit, range(n), threads))
    return float((n - 1) / n * np.sum((b - b.mean()) ** 2))


# ---------------------------------------------------------------- config files

def _ints(text: str) -> list:
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def parse_coords(text: str, p: int | None = None) -> list:
    """1-based coordinate list (``"1"``, ``"1-10"``, ``"1,3,5"``, ``"all"``) to 0-based."""
    if str(text).strip().lower() == "all":
        if p is None:
            raise InvalidSpec("coords = all needs a known p")
        return list(range(p))
    try:
        coords = [c - 1 for c in _ints(text)]
    except ValueError:
        raise InvalidSpec(f"cannot parse coordinates {text!r}") from None
    if not coords or min(coords) < 0:
        raise InvalidSpec(f"coordinates are 1-based positive integers, got {text!r}")
    if p is not None and max(coords) >= p:
        raise InvalidSpec(f"coordinate {max(coords) + 1} exceeds p={p}")
    return coords


_KNOWN_KEYS = {
    "family", "dist", "factor_dist", "include_intercept", "truncate", "group_sizes",
    "loss", "errors", "n_list", "kappa", "outer_reps", "inner_reps", "coords", "alpha",
    "bonferroni", "seed", "threads", "n0", "kappas", "k", "seeds",
}


def load_config(path: str) -> ExperimentConfig:
    """Read a ``key = value`` experiment file (an ``[experiment]`` header is optional).

    Example::

        family = iid
        dist = gaussian
        loss = huber(k=1.345, eps=0.05, delta=0.1)
        errors = gaussian(1.0)
        n_list = 400
        kappa = 0.5
        outer_reps = 10
        inner_reps = 300
        coords = 1-10
        alpha = 0.05
        bonferroni = true
        seed = 1
    """
    if not os.path.exists(path):
        raise InvalidSpec(f"file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise InvalidSpec(f"{path}: {err}") from None
    if not cp.has_section("experiment"):
        raise InvalidSpec(f"{path}: missing [experiment] section")
    sec = cp["experiment"]
    return config_from_mapping(dict(sec), source=path)


def config_from_mapping(values: dict, source: str = "<config>") -> ExperimentConfig:
    values = {k.lower(): str(v).strip() for k, v in values.items()}
    unknown = set(values) - _KNOWN_KEYS
    if unknown:
        raise InvalidSpec(f"{source}: unknown keys {sorted(unknown)}")

    def get(key, conv, default):
        if key not in values:
            return default
        try:
            return conv(values[key])
        except (ValueError, TypeError):
            raise InvalidSpec(f"{source}: bad value for {key}: {values[key]!r}") from None

    def boolean(s):
        s = s.lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(s)

    def floats(s):
        return [float(x) for x in s.replace(" ", "").split(",") if x]

    n_list = get("n_list", _ints, [100, 200, 400, 800])
    kappa = get("kappa", float, 0.5)
    fam = values.get("family", "iid")
    ds_kwargs = dict(
        family=fam, n=n_list[0], p=max(1, int(math.floor(kappa * n_list[0]))),
        dist=values.get("dist", "gaussian"), factor_dist=values.get("factor_dist", "gaussian"),
        include_intercept=get("include_intercept", boolean, False),
    )
    if "truncate" in values:
        ds_kwargs["truncate"] = tuple(get("truncate", floats, None))
    if "group_sizes" in values:
        ds_kwargs["group_sizes"] = get("group_sizes", _ints, None)
    design_spec = DesignSpec(**ds_kwargs)
    cfg = ExperimentConfig(
        design_spec=design_spec,
        error_model=noise.parse_errors(values.get("errors", "gaussian(1.0)")),
        loss=parse_loss(values.get("loss", "huber")),
        n_list=n_list, kappa=kappa,
        outer_reps=get("outer_reps", int, 50), inner_reps=get("inner_reps", int, 300),
        coords=parse_coords(values.get("coords", "1")),
        alpha=get("alpha", float, 0.05), bonferroni=get("bonferroni", boolean, False),
        master_seed=get("seed", int, 0), threads=get("threads", int, 1),
        n0=get("n0", int, 50), kappas=get("kappas", floats, [0.5, 0.8]),
        K=get("k", int, 100), seeds=get("seeds", _ints, list(range(20))),
    )
    return cfg


# ---------------------------------------------------------------- outputs

COVERAGE_COLUMNS = ["family", "errors", "n", "p", "kappa", "design_rep", "coord", "coverage", "sd",
                    "bonferroni_marginal", "min_coverage", "bonferroni_coverage"]
SUMMARY_COLUMNS = ["n", "p", "mean_coverage", "q25", "median", "q75", "mean_min_coverage",
                   "mean_bonferroni_coverage", "failures", "fits", "valid"]
KS_COLUMNS = ["seed", "kappa", "n0", "n", "p0", "p2", "ks1", "ks2", "sup1", "sup2"]


def write_manifest(outdir, command: str, config: dict, outputs: list, runtime: float, extra=None):
    from . import __version__
    manifest = {
        "command": command, "version": __version__, "backend": kernels.BACKEND,
        "config": config, "runtime_seconds": runtime,
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    write_json(path, manifest)
    return path


def write_coverage(report: CoverageReport, outdir: str) -> list:
    os.makedirs(outdir, exist_ok=True)
    p1 = os.path.join(outdir, "coverage.csv")
    p2 = os.path.join(outdir, "summary.csv")
    write_table(p1, list(report.rows()), COVERAGE_COLUMNS)
    write_table(p2, [c.summary() for c in report.cells], SUMMARY_COLUMNS)
    write_manifest(outdir, "coverage", report.config.echo(), [p1, p2], report.runtime)
    return [p1, p2]


def write_ks(report: KsReport, cfg: ExperimentConfig, outdir: str) -> list:
    os.makedirs(outdir, exist_ok=True)
    p1 = os.path.join(outdir, "ks.csv")
    write_table(p1, report.rows, KS_COLUMNS)
    p2 = os.path.join(outdir, "ks_samples.csv")
    rows = []
    for (s, kap), arrs in report.samples.items():
        for name, arr in zip(("X0", "X1", "X2"), arrs):
            for k, v in enumerate(arr):
                rows.append({"seed": s, "kappa": kap, "design": name, "rep": k, "scaled_beta1": v})
    write_table(p2, rows, ["seed", "kappa", "design", "rep", "scaled_beta1"])
    summary = {str(k): report.fraction_ks2_smaller(k) for k in cfg.kappas}
    write_manifest(outdir, "ks", cfg.echo(), [p1, p2], report.runtime,
                   {"fraction_ks2_smaller": summary})
    return [p1, p2]
