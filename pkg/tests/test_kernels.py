import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mestlab import _kernels_py, kernels


def _eval(mod, name, x, *params):
    out = [np.empty_like(x) for _ in range(4)]
    getattr(mod, name)(x, *params, *out)
    return out


CASES = [("square_eval", ()), ("smoothed_huber_eval", (1.345, 0.1, 0.05)),
         ("smoothed_huber_eval", (0.5, 0.4, 0.2)), ("pseudo_l1_eval", (0.1, 0.05))]


@pytest.mark.parametrize("name,params", CASES)
def test_backends_agree(name, params, rng):
    x = np.concatenate([rng.standard_normal(5000) * 3, np.linspace(-3, 3, 2001), [0.0, -0.0]])
    ref = _eval(_kernels_py, name, x, *params)
    for mod in kernels.backends().values():
        got = _eval(mod, name, x, *params)
        for a, b in zip(ref, got):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def brute_sup(a, b):
    grid = np.concatenate([a, b])
    Fa = (a[None, :] <= grid[:, None]).mean(1)
    Fb = (b[None, :] <= grid[:, None]).mean(1)
    return np.abs(Fa - Fb).max()


def test_sup_distance_basic(backend):
    assert backend.sup_distance_sorted(np.array([0.0]), np.array([1.0])) == 1.0
    a = np.array([1.0, 2.0, 3.0])
    assert backend.sup_distance_sorted(a, a) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=20),
       st.lists(st.integers(-5, 5), min_size=1, max_size=20))
def test_sup_distance_brute_force_with_ties(a, b):
    a = np.sort(np.array(a, dtype=float))
    b = np.sort(np.array(b, dtype=float))
    want = brute_sup(a, b)
    for mod in kernels.backends().values():
        assert abs(mod.sup_distance_sorted(a, b) - want) <= 1e-12


def test_backend_selected():
    assert kernels.BACKEND in kernels.backends()
