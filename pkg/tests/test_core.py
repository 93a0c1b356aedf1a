import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mestlab import (DesignMatrix, FactorizationFailure, InvalidSpec, NoConvergence, RankDeficient,
                     SolverOptions, fit, make_pseudo_l1, make_smoothed_huber, make_square,
                     newton_step, objective)


def test_lse_oracle(rng):
    for _ in range(20):
        n = int(rng.integers(5, 120))
        p = int(rng.integers(1, n))
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        want = np.linalg.solve(X.T @ X, X.T @ y)
        got = fit(X, y, make_square()).beta_hat
        assert np.linalg.norm(got - want) <= 1e-10 * max(1.0, np.linalg.norm(want))


@pytest.mark.parametrize("loss", [make_smoothed_huber(), make_pseudo_l1(), make_pseudo_l1(0.01, 0.01)], ids=str)
def test_converges_to_stationary_point(loss, rng):
    X = rng.standard_normal((200, 100))
    y = rng.standard_t(2, 200) * 3
    res = fit(X, y, loss)
    assert res.converged
    g = X.T @ loss.psi(y - X @ res.beta_hat) / 200
    assert np.linalg.norm(g) <= 1e-10 * res.grad_scale
    # objective is below nearby perturbations
    F = objective(X, y, loss, res.beta_hat)
    assert F == pytest.approx(res.objective)
    for _ in range(5):
        assert objective(X, y, loss, res.beta_hat + 1e-3 * rng.standard_normal(100)) > F


def test_trace_monotone(rng):
    X = rng.standard_normal((100, 30))
    y = rng.standard_cauchy(100)
    res = fit(X, y, make_pseudo_l1())
    objs = [t["objective"] for t in res.trace]
    assert all(b <= a + 1e-15 * abs(a) for a, b in zip(objs, objs[1:]))


def test_newton_step_decrement(rng):
    X = rng.standard_normal((50, 5))
    y = rng.standard_normal(50)
    d, dec = newton_step(X, y, make_square(), np.zeros(5))
    np.testing.assert_allclose(d, np.linalg.solve(X.T @ X, X.T @ y), rtol=1e-10)
    assert dec == pytest.approx(np.sqrt(y @ X @ d / 50))
    res = fit(X, y, make_smoothed_huber())
    _, dec = newton_step(X, y, make_smoothed_huber(), res.beta_hat)
    assert dec < 1e-9


def test_rank_deficient():
    X = np.ones((10, 2))
    with pytest.raises(RankDeficient) as err:
        fit(X, np.arange(10.0), make_square())
    assert err.value.ratio < 1e-10


def test_no_convergence_reports_trace(rng):
    X = rng.standard_normal((40, 10))
    y = rng.standard_t(1, 40) * 10
    with pytest.raises(NoConvergence) as err:
        fit(X, y, make_pseudo_l1(0.01, 0.01), SolverOptions(max_iter=1))
    assert err.value.trace and err.value.result is not None


def test_factorization_failure_zero_column(rng):
    X = np.hstack([rng.standard_normal((10, 2)), np.zeros((10, 1))])
    with pytest.raises(FactorizationFailure):
        fit(X, rng.standard_normal(10), make_square(), SolverOptions(check_rank=False))


def test_overflow_is_not_reported_as_converged():
    X = np.array([[1e200], [1e200]])
    with np.errstate(all="ignore"), pytest.raises((NoConvergence, FactorizationFailure)):
        fit(X, np.array([1.0, 2.0]), make_square(), SolverOptions(check_rank=False))


def test_input_validation():
    X = np.eye(3)
    with pytest.raises(InvalidSpec):
        fit(X, np.ones(4), make_square())
    with pytest.raises(InvalidSpec):
        fit(X, np.array([1.0, np.nan, 0.0]), make_square())
    with pytest.raises(InvalidSpec):
        DesignMatrix(np.ones((2, 3)))
    with pytest.raises(InvalidSpec):
        DesignMatrix(np.eye(3), Jn=[3])
    with pytest.raises(InvalidSpec):
        DesignMatrix(np.eye(3), has_intercept=True)


def test_design_matrix_properties(rng):
    X = np.hstack([np.ones((20, 1)), rng.standard_normal((20, 3))])
    dm = DesignMatrix(X, has_intercept=True)
    assert dm.Jn == (1, 2, 3)
    assert dm.kappa == pytest.approx(4 / 20)
    ev = np.linalg.eigvalsh(X.T @ X / 20)
    assert dm.lambda_plus == pytest.approx(ev[-1]) and dm.lambda_minus == pytest.approx(ev[0])
    assert not dm.X.flags.writeable
    np.testing.assert_array_equal(dm.drop(1), X[:, [0, 2, 3]])


def test_equivariance(rng):
    X = rng.standard_normal((60, 10))
    eps = rng.standard_normal(60)
    beta = rng.standard_normal(10)
    loss = make_smoothed_huber()
    b0 = fit(X, eps, loss).beta_hat
    b1 = fit(X, X @ beta + eps, loss).beta_hat
    np.testing.assert_allclose(b1 - beta, b0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.floats(0.05, 0.9))
def test_property_gradient_small_and_weights(seed, n, kappa):
    rng = np.random.default_rng(seed)
    p = max(1, int(kappa * n))
    X = rng.standard_normal((n, p))
    y = rng.standard_t(3, n)
    loss = make_smoothed_huber()
    res = fit(X, y, loss)
    assert res.converged and res.grad_norm <= 1e-10 * res.grad_scale
    assert np.all(res.d_weights >= loss.K0) and np.all(res.d_weights <= loss.K1)
    np.testing.assert_allclose(res.residuals, y - X @ res.beta_hat, atol=1e-12)
