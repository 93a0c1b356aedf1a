"""Error distributions for the regression noise.

Transform models write each error as ``u(W)`` with ``W`` standard normal and
report ``c1 = sup|u'|`` and ``c2 = sup|u''|``. Heavy-tailed models (``t``,
``cauchy``) are drawn by inverse CDF and carry no such constants.

Config strings: ``gaussian(1.0)``, ``t(2)``, ``cauchy``, ``uniform01``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .exceptions import InvalidModel
from .rng import substream

_PHI_AT_1 = math.exp(-0.5) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ErrorModel:
    kind: str
    sigma: float = 1.0
    df: float = math.nan
    c1: Optional[float] = None
    c2: Optional[float] = None
    min_var: Optional[float] = None
    symmetric: bool = False
    u: Optional[Callable] = None
    u1: Optional[Callable] = None
    u2: Optional[Callable] = None

    @property
    def is_transform(self) -> bool:
        return self.c1 is not None and self.c2 is not None

    @property
    def in_a2(self) -> bool:
        """True when the model satisfies the smooth-transform assumption."""
        return self.is_transform

    @property
    def variance(self) -> float:
        if self.kind == "gaussian":
            return self.sigma ** 2
        if self.kind == "uniform01":
            return 1.0 / 12.0
        if self.kind == "t":
            return self.df / (self.df - 2.0) if self.df > 2 else math.inf
        if self.kind == "cauchy":
            return math.nan
        if self.kind == "custom":
            w, wt = _hermite_nodes()
            v = self.u(w)
            m = wt @ v
            return float(wt @ (v - m) ** 2)
        raise InvalidModel(f"unknown error model {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian({self.sigma:g})"
        if self.kind == "t":
            return f"t({self.df:g})"
        return self.kind


def gaussian(sigma: float = 1.0) -> ErrorModel:
    if not sigma > 0:
        raise InvalidModel(f"gaussian sigma must be positive, got {sigma}")
    s = float(sigma)
    return ErrorModel("gaussian", sigma=s, c1=s, c2=0.0, min_var=s * s, symmetric=True,
                      u=lambda w: s * w, u1=lambda w: np.full_like(w, s), u2=np.zeros_like)


def student_t(df: float) -> ErrorModel:
    if not df > 0:
        raise InvalidModel(f"t degrees of freedom must be positive, got {df}")
    var = df / (df - 2.0) if df > 2 else None
    return ErrorModel("t", df=float(df), min_var=var, symmetric=True)


def cauchy() -> ErrorModel:
    return ErrorModel("cauchy", symmetric=True)


def uniform01() -> ErrorModel:
    """Uniform(0, 1) errors written as ``Phi(W)``."""
    return ErrorModel(
        "uniform01", c1=1.0 / math.sqrt(2.0 * math.pi), c2=_PHI_AT_1, min_var=1.0 / 12.0,
        symmetric=False, u=special.ndtr, u1=stats.norm.pdf, u2=lambda w: -w * stats.norm.pdf(w),
    )


def custom_transform(u, u1, u2, c1: float, c2: float, min_var: float | None = None,
                     symmetric: bool = False) -> ErrorModel:
    if not (c1 > 0 and math.isfinite(c1) and c2 >= 0 and math.isfinite(c2)):
        raise InvalidModel("custom transform needs finite c1 > 0 and c2 >= 0")
    return ErrorModel("custom", c1=float(c1), c2=float(c2), min_var=min_var,
                      symmetric=symmetric, u=u, u1=u1, u2=u2)


def draw(model: ErrorModel, n: int, seed=0, *key) -> np.ndarray:
    """Draw ``n`` i.i.d. errors from the stream keyed by ``(seed, *key)``."""
    if n < 1:
        raise InvalidModel(f"need n >= 1 draws, got {n}")
    rng = substream(seed, *key)
    if model.kind == "gaussian":
        return model.sigma * rng.standard_normal(n)
    if model.kind in ("uniform01", "custom"):
        return np.asarray(model.u(rng.standard_normal(n)), dtype=float)
    if model.kind == "t":
        return special.stdtrit(model.df, rng.random(n))
    if model.kind == "cauchy":
        return np.tan(np.pi * (rng.random(n) - 0.5))
    raise InvalidModel(f"unknown error model {model.kind!r}")


def draw_with_latent(model: ErrorModel, n: int, seed=0, *key):
    """Transform models only: return ``(eps, W)`` with ``eps = u(W)``."""
    if not model.is_transform:
        raise InvalidModel(f"{model.describe()} is not a transform model")
    w = substream(seed, *key).standard_normal(n)
    if model.kind == "gaussian":
        return model.sigma * w, w
    return np.asarray(model.u(w), dtype=float), w


def _hermite_nodes(deg: int = 120):
    x, w = np.polynomial.hermite_e.hermegauss(deg)
    return x, w / math.sqrt(2.0 * math.pi)


def expected_psi(model: ErrorModel, loss) -> float:
    """``E psi(eps)``; zero for symmetric errors because every loss here is even."""
    if model.symmetric:
        return 0.0
    if model.is_transform:
        x, w = _hermite_nodes()
        return float(w @ loss.psi(model.u(x)))
    raise InvalidModel(f"E psi is not available for {model.describe()}")


_CALL = re.compile(r"^\s*([A-Za-z_][\w]*)\s*(?:\((.*)\))?\s*$")


def parse_errors(text: str) -> ErrorModel:
    m = _CALL.match(text)
    if not m:
        raise InvalidModel(f"cannot parse error model {text!r}")
    name = m.group(1).lower()
    body = (m.group(2) or "").strip()
    arg = None
    if body:
        if "=" in body:
            body = body.split("=", 1)[1]
        try:
            arg = float(body)
        except ValueError:
            raise InvalidModel(f"error model parameter is not a number: {body!r}") from None
    if name in ("gaussian", "normal"):
        return gaussian(1.0 if arg is None else arg)
    if name == "t":
        if arg is None:
            raise InvalidModel("t errors need degrees of freedom, e.g. t(3)")
        return student_t(arg)
    if name == "cauchy":
        return cauchy()
    if name in ("uniform01", "uniform"):
        return uniform01()
    raise InvalidModel(f"unknown error model {name!r}; expected gaussian, t, cauchy or uniform01")
