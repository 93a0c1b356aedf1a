import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mestlab import InvalidSpec, SolverOptions, fit, make_smoothed_huber, make_square
from mestlab.designs import DesignSpec
from mestlab.exceptions import EmptySample
from mestlab.harness import (ExperimentConfig, config_from_mapping, jackknife_variance, load_config,
                             parse_coords, run_coverage, run_ks_comparison, two_sample_ks, write_coverage,
                             write_ks, z_quantile)


def brute_ks(a, b):
    grid = np.concatenate([a, b])
    Fa = (a[None, :] <= grid[:, None]).mean(1)
    Fb = (b[None, :] <= grid[:, None]).mean(1)
    return np.abs(Fa - Fb).max()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30), st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_ks_matches_brute_force(a, b):
    a, b = np.array(a, float), np.array(b, float)
    scaled, d = two_sample_ks(a, b)
    assert d == pytest.approx(brute_ks(a, b), abs=1e-12)
    assert scaled == pytest.approx(d * math.sqrt(a.size * b.size / (a.size + b.size)))


def test_ks_equal_sizes_scale():
    a = np.arange(10.0)
    scaled, d = two_sample_ks(a, a + 100)
    assert d == 1.0 and scaled == pytest.approx(math.sqrt(5))
    assert two_sample_ks(a, a) == (0.0, 0.0)
    with pytest.raises(EmptySample):
        two_sample_ks([], a)


def test_z_quantile():
    assert z_quantile(0.05) == pytest.approx(1.959963984540054)
    assert z_quantile(1.0) == 0.0
    assert z_quantile(0.05, 10) > z_quantile(0.05)


def small_cfg(**kw):
    base = dict(design_spec=DesignSpec("iid", 40, 10), n_list=[40], kappa=0.25, outer_reps=2,
                inner_reps=40, coords=[0, 1], master_seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_coverage_alpha_one_is_zero():
    rep = run_coverage(small_cfg(alpha=1.0))
    assert rep.mean_coverage == 0.0


def test_coverage_monotone_in_alpha():
    covs = [run_coverage(small_cfg(alpha=a)).mean_coverage for a in (0.5, 0.2, 0.05)]
    assert covs[0] <= covs[1] <= covs[2]


def test_bonferroni_dominates():
    rep = run_coverage(small_cfg(bonferroni=True))
    c = rep.cells[0]
    assert np.all(c.bonferroni_coverage >= c.simultaneous_unadjusted)
    assert np.all(c.bonferroni_marginal >= c.per_design_coverage)


def test_coverage_deterministic_across_threads(tmp_path):
    outs = []
    for t in (1, 3):
        d = tmp_path / f"t{t}"
        write_coverage(run_coverage(small_cfg(threads=t)), str(d))
        outs.append(((d / "coverage.csv").read_bytes(), (d / "summary.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_ks_deterministic_across_threads(tmp_path):
    cfg = dict(n_list=[120], n0=30, kappas=[0.5], K=20, seeds=[0, 1])
    outs = []
    for t in (1, 2):
        c = ExperimentConfig(threads=t, **cfg)
        write_ks(run_ks_comparison(c), c, str(tmp_path / f"t{t}"))
        outs.append((tmp_path / f"t{t}" / "ks.csv").read_bytes())
    assert outs[0] == outs[1]


def test_config_validation():
    with pytest.raises(InvalidSpec):
        run_coverage(small_cfg(kappa=1.5))
    with pytest.raises(InvalidSpec):
        run_coverage(small_cfg(inner_reps=10))
    with pytest.raises(InvalidSpec):
        run_coverage(small_cfg(coords=[20]))
    with pytest.raises(InvalidSpec):
        run_ks_comparison(ExperimentConfig(n_list=[40], n0=50))


def test_parse_coords():
    assert parse_coords("1") == [0]
    assert parse_coords("1-3,7") == [0, 1, 2, 6]
    assert parse_coords("all", 3) == [0, 1, 2]
    for bad in ("0", "x", "1-", ""):
        with pytest.raises(InvalidSpec):
            parse_coords(bad)
    with pytest.raises(InvalidSpec):
        parse_coords("5", 4)


def test_load_config(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("loss = huber(k=1.345)\nerrors = t(3)\nn_list = 100, 200\nkappa = 0.3\n"
                 "coords = 1-4\nbonferroni = yes\nseed = 7\n")
    cfg = load_config(str(p))
    assert cfg.n_list == [100, 200] and cfg.coords == [0, 1, 2, 3] and cfg.bonferroni
    assert cfg.master_seed == 7 and cfg.error_model.kind == "t"
    with pytest.raises(InvalidSpec):
        load_config(str(tmp_path / "missing.cfg"))
    with pytest.raises(InvalidSpec):
        config_from_mapping({"bogus": "1"})
    with pytest.raises(InvalidSpec):
        config_from_mapping({"bonferroni": "maybe"})


def test_jackknife_square_closed_form(rng):
    X = rng.standard_normal((30, 4))
    y = rng.standard_normal(30)
    n = 30
    loos = np.array([np.linalg.lstsq(np.delete(X, i, 0), np.delete(y, i), rcond=None)[0][1] for i in range(n)])
    want = (n - 1) / n * np.sum((loos - loos.mean()) ** 2)
    assert jackknife_variance(X, y, make_square(), 1) == pytest.approx(want, rel=1e-8)
    assert jackknife_variance(X, y, make_square(), 1, threads=3) == jackknife_variance(X, y, make_square(), 1)
