import math

import numpy as np
import pytest

from mestlab import InvalidSpec, SolverOptions, fit, make_pseudo_l1, make_smoothed_huber, make_square
from mestlab import noise
from mestlab.designs import DesignSpec, generate
from mestlab.sensitivity import (g_matrix, gradient_beta, hessian_beta_j, hessian_opnorms, opnorm_power,
                                 sopi_bound, sopi_moments)

FD_OPTS = SolverOptions(tol=1e-12)


def fd_gradient(X, y, loss, h=1e-5):
    n, p = X.shape
    out = np.zeros((p, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[:, i] = (fit(X, y + e, loss, FD_OPTS).beta_hat - fit(X, y - e, loss, FD_OPTS).beta_hat) / (2 * h)
    return out


def test_square_gradient_is_pseudoinverse(rng):
    X = rng.standard_normal((30, 6))
    res = fit(X, rng.standard_normal(30), make_square())
    np.testing.assert_allclose(gradient_beta(res, X), np.linalg.solve(X.T @ X, X.T), atol=1e-12)
    assert not np.any(hessian_beta_j(res, X, 2))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((25, 5))
    y = rng.standard_t(3, 25)
    loss = make_smoothed_huber(1.0, 0.05, 0.3)
    res = fit(X, y, loss, FD_OPTS)
    A = gradient_beta(res, X)
    np.testing.assert_allclose(A @ X, np.eye(5), atol=1e-8)
    fd = fd_gradient(X, y, loss)
    assert np.abs(fd - A).max() <= 1e-5 * np.abs(A).max()


def test_hessian_matches_finite_differences(rng):
    X = rng.standard_normal((20, 4))
    y = rng.standard_normal(20)
    loss = make_pseudo_l1(0.5, 0.05)
    res = fit(X, y, loss, FD_OPTS)
    h = 1e-5
    for j in range(4):
        H = hessian_beta_j(res, X, j)
        assert np.abs(H - H.T).max() <= 1e-10
        fd = np.zeros((20, 20))
        for i in range(20):
            e = np.zeros(20)
            e[i] = h
            gp = gradient_beta(fit(X, y + e, loss, FD_OPTS), X)[j]
            gm = gradient_beta(fit(X, y - e, loss, FD_OPTS), X)[j]
            fd[:, i] = (gp - gm) / (2 * h)
        assert np.abs(fd - H).max() <= 1e-4 * np.abs(H).max()


def test_g_is_d_projection(rng):
    X = rng.standard_normal((30, 8))
    loss = make_smoothed_huber()
    res = fit(X, rng.standard_t(2, 30), loss)
    G = g_matrix(res, X)
    s = np.sqrt(res.d_weights)
    P = (s[:, None] * G) / s[None, :]
    np.testing.assert_allclose(P @ P, P, atol=1e-8)
    np.testing.assert_allclose(G @ X, 0, atol=1e-10)


def test_opnorm_power_matches_eigvalsh(rng):
    A = rng.standard_normal((40, 40))
    H = A + A.T
    assert opnorm_power(H, iters=2000, tol=1e-14) == pytest.approx(np.abs(np.linalg.eigvalsh(H)).max(), rel=1e-6)
    assert opnorm_power(np.zeros((3, 3))) == 0.0


def test_sopi_bound_formula():
    assert sopi_bound((0, 0, 0), 1, 1, 1) == 0
    assert sopi_bound((1, 1, 1), 1, 1, 1) == pytest.approx(4 * math.sqrt(5))
    assert sopi_bound({"kappa0": 3.0, "kappa1": 1.0, "kappa2": 0.0}, 1.0, 0.0, 2.0) == 0
    with pytest.raises(InvalidSpec):
        sopi_bound((1, 1, 1), 1, 1, 0.0)


def test_sopi_square_gaussian():
    dm = generate(DesignSpec("iid", 60, 20, seed=3))
    rep = sopi_moments(dm, make_square(), noise.gaussian(1.0), coords=[0, 5], reps=100, seed=1)
    A = np.linalg.solve(dm.X.T @ dm.X, dm.X.T)
    np.testing.assert_allclose(rep.kappa1, np.linalg.norm(A[[0, 5]], axis=1), rtol=1e-10)
    np.testing.assert_allclose(rep.kappa0, np.sqrt(np.sum(A[[0, 5]] ** 4, axis=1)), rtol=1e-10)
    assert np.all(rep.kappa2 == 0)
    assert np.all(rep.sopi_bound == 0)
    assert rep.bound_checks["grad_norm_sq"] == rep.bound_checks["grad_fourth"] == 0


def test_sopi_bounds_hold_per_draw():
    dm = generate(DesignSpec("iid", 60, 20, seed=4))
    rep = sopi_moments(dm, make_pseudo_l1(0.5), noise.uniform01(), coords=[0, 1], reps=100, seed=2)
    assert rep.bound_checks == {"grad_norm_sq": 0, "grad_fourth": 0, "hessian_fourth": 0, "draws": 100}
    assert np.all(rep.kappa2 > 0) and np.all(np.isfinite(rep.sopi_bound))


def test_sopi_rejects_few_reps():
    with pytest.raises(InvalidSpec):
        sopi_moments(np.eye(3), make_square(), noise.gaussian(), reps=10)


def test_sopi_heavy_tails_have_no_bound():
    dm = generate(DesignSpec("iid", 40, 10, seed=1))
    rep = sopi_moments(dm, make_smoothed_huber(), noise.student_t(2), coords=[0], reps=100, seed=1)
    assert np.isnan(rep.sopi_bound[0])


@pytest.mark.slow
def test_mj_scaling_law():
    vals = {}
    for n in (50, 200):
        ms = []
        for s in range(3):
            dm = generate(DesignSpec("iid", n, n // 2, seed=s))
            rep = sopi_moments(dm, make_smoothed_huber(), noise.gaussian(), coords=[0], reps=100, seed=s)
            ms.append(rep.Mj[0] * n)
        vals[n] = np.median(ms)
    assert vals[200] <= 3 * vals[50]
