import math

import numpy as np
import pytest

from mestlab import InvalidModel, make_smoothed_huber, make_square
from mestlab import noise


def test_gaussian_moments():
    e = noise.draw(noise.gaussian(1.0), 100_000, 3)
    assert abs(e.mean()) < 0.02 and abs(e.var() - 1) < 0.03


def test_uniform01_transform():
    m = noise.uniform01()
    e = noise.draw(m, 10_000, 1)
    assert e.min() >= 0 and e.max() <= 1
    assert m.c1 == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert m.c2 == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi))
    w = np.linspace(-8, 8, 100001)
    assert np.abs(m.u1(w)).max() <= m.c1 + 1e-15
    assert np.abs(m.u2(w)).max() <= m.c2 + 1e-15
    assert not m.symmetric and m.in_a2


def test_heavy_tails_outside_a2():
    for m in (noise.student_t(2), noise.cauchy()):
        assert m.c1 is None and m.c2 is None and not m.in_a2 and m.symmetric


def test_t_draws_match_distribution():
    from scipy import stats
    e = noise.draw(noise.student_t(3), 20_000, 5)
    assert stats.kstest(e, stats.t(3).cdf).pvalue > 1e-3
    c = noise.draw(noise.cauchy(), 20_000, 5)
    assert stats.kstest(c, stats.cauchy.cdf).pvalue > 1e-3


def test_stream_discipline():
    m = noise.gaussian(2.0)
    a = noise.draw(m, 50, 7, 1, 3)
    np.testing.assert_array_equal(a, noise.draw(m, 50, 7, 1, 3))
    b = noise.draw(m, 50, 7, 1, 4)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(noise.draw(m, 5000, 7, 1, 3), noise.draw(m, 5000, 7, 1, 4))[0, 1]) < 0.05


def test_latent_representation():
    eps, w = noise.draw_with_latent(noise.uniform01(), 100, 2)
    from scipy.special import ndtr
    np.testing.assert_array_equal(eps, ndtr(w))
    with pytest.raises(InvalidModel):
        noise.draw_with_latent(noise.cauchy(), 10, 0)


def test_expected_psi():
    assert noise.expected_psi(noise.gaussian(), make_smoothed_huber()) == 0.0
    # square loss: E psi(eps) = E eps = 1/2 for uniform(0, 1)
    assert noise.expected_psi(noise.uniform01(), make_square()) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("text,kind", [("gaussian(1.0)", "gaussian"), ("gaussian", "gaussian"),
                                       ("t(2)", "t"), ("cauchy", "cauchy"), ("uniform01", "uniform01")])
def test_parse(text, kind):
    assert noise.parse_errors(text).kind == kind


@pytest.mark.parametrize("text", ["gaussian(-1)", "gaussian(0)", "t(0)", "t", "laplace", "t(x)"])
def test_parse_rejects(text):
    with pytest.raises(InvalidModel):
        noise.parse_errors(text)


def test_draw_rejects_empty():
    with pytest.raises(InvalidModel):
        noise.draw(noise.gaussian(), 0, 1)
