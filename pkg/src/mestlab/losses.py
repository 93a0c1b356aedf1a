"""Smooth, strongly convex regression losses.

A :class:`LossSpec` carries the loss family, its parameters and the curvature
constants ``K0 <= psi' <= K1`` and ``|psi''| <= K2 * sqrt(psi')``. Only C^2
losses are built here; the exact (kinked) Huber loss is available through
:func:`huber_exact_rho` / :func:`huber_exact_psi` as a reference evaluator.

Loss strings accepted by :func:`parse_loss`::

    square
    huber                                  # k=1.345, eps=0.05, delta=0.1
    huber(k=1.345, eps=0.05, delta=0.1)    # smoothed Huber
    pseudo_l1(delta=0.1, eps=0.05)         # smoothed L1 (alias: l1)

Positional arguments follow the same order, e.g. ``huber(1.345)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .exceptions import InvalidSpec

SQUARE = "square"
SMOOTHED_HUBER = "smoothed-huber"
PSEUDO_L1 = "pseudo-l1"

DEFAULT_HUBER_K = 1.345
DEFAULT_EPS = 0.05
DEFAULT_DELTA = 0.1


@dataclass(frozen=True)
class LossSpec:
    kind: str
    k: float = math.nan
    delta: float = math.nan
    eps: float = 0.0
    K0: float = 1.0
    K1: float = 1.0
    K2: float = 0.0
    name: str = field(default="", compare=False)

    @property
    def K3(self) -> float:
        """Lipschitz constant of ``psi'``: ``2 sqrt(K1) K2``."""
        return 2.0 * math.sqrt(self.K1) * self.K2

    def evaluate(self, x):
        """Return ``(rho, psi, psi', psi'')`` at ``x`` as float arrays."""
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        flat = np.ascontiguousarray(x.reshape(-1))
        out = [np.empty_like(flat) for _ in range(4)]
        if self.kind == SQUARE:
            kernels.square_eval(flat, *out)
        elif self.kind == SMOOTHED_HUBER:
            kernels.smoothed_huber_eval(flat, self.k, self.delta, self.eps, *out)
        elif self.kind == PSEUDO_L1:
            kernels.pseudo_l1_eval(flat, self.delta, self.eps, *out)
        else:
            raise InvalidSpec(f"unknown loss kind {self.kind!r}")
        return tuple(o.reshape(shape) for o in out)

    def rho(self, x):
        return self.evaluate(x)[0]

    def psi(self, x):
        return self.evaluate(x)[1]

    def psi1(self, x):
        return self.evaluate(x)[2]

    def psi2(self, x):
        return self.evaluate(x)[3]

    def __str__(self):
        return self.name or self.kind


def rho(loss: LossSpec, x):
    return _scalar_or_array(loss.rho(x), x)


def psi(loss: LossSpec, x):
    return _scalar_or_array(loss.psi(x), x)


def psi1(loss: LossSpec, x):
    return _scalar_or_array(loss.psi1(x), x)


def psi2(loss: LossSpec, x):
    return _scalar_or_array(loss.psi2(x), x)


def _scalar_or_array(value, x):
    if np.ndim(x) == 0:
        return float(value)
    return value


def make_square() -> LossSpec:
    return LossSpec(kind=SQUARE, K0=1.0, K1=1.0, K2=0.0, name="square")


def make_smoothed_huber(
    k: float = DEFAULT_HUBER_K,
    epsilon_convexity: float = DEFAULT_EPS,
    delta: float = DEFAULT_DELTA,
) -> LossSpec:
    """Huber loss with a C^2 blend on ``k - delta < |x| < k + delta``.

    ``psi``, ``psi'`` and ``psi''`` coincide with the exact Huber values
    outside the blend band; ``rho`` there sits below exact Huber by the
    constant ``delta^2 / 10``. The term ``epsilon_convexity * x^2 / 2`` makes
    ``K0 = epsilon_convexity`` and ``K1 = 1 + epsilon_convexity``.
    """
    if not k > 0:
        raise InvalidSpec(f"huber k must be positive, got {k}")
    if not 0 < epsilon_convexity < 1:
        raise InvalidSpec(f"epsilon_convexity must lie in (0, 1), got {epsilon_convexity}")
    if not delta > 0:
        raise InvalidSpec(f"delta must be positive, got {delta}")
    if delta >= k:
        raise InvalidSpec(f"delta must be smaller than k (delta={delta}, k={k})")
    proto = LossSpec(
        kind=SMOOTHED_HUBER, k=float(k), delta=float(delta), eps=float(epsilon_convexity),
        K0=float(epsilon_convexity), K1=1.0 + epsilon_convexity, K2=math.inf,
    )
    K2 = _curvature_ratio_max(proto, k - delta, k + delta)
    return LossSpec(
        kind=SMOOTHED_HUBER, k=float(k), delta=float(delta), eps=float(epsilon_convexity),
        K0=float(epsilon_convexity), K1=1.0 + epsilon_convexity, K2=K2,
        name=f"huber(k={k:g}, eps={epsilon_convexity:g}, delta={delta:g})",
    )


def make_pseudo_l1(delta: float = DEFAULT_DELTA, epsilon_convexity: float = DEFAULT_EPS) -> LossSpec:
    """Smoothed absolute loss ``delta (sqrt(1 + x^2/delta^2) - 1)`` plus ``eps x^2/2``."""
    if not delta > 0:
        raise InvalidSpec(f"delta must be positive, got {delta}")
    if not 0 < epsilon_convexity < 1:
        raise InvalidSpec(f"epsilon_convexity must lie in (0, 1), got {epsilon_convexity}")
    K1 = 1.0 / delta + epsilon_convexity
    proto = LossSpec(kind=PSEUDO_L1, delta=float(delta), eps=float(epsilon_convexity),
                     K0=float(epsilon_convexity), K1=K1, K2=math.inf)
    # |psi''| / sqrt(psi') is negligible beyond ~50 delta
    K2 = _curvature_ratio_max(proto, 0.0, 50.0 * delta)
    return LossSpec(
        kind=PSEUDO_L1, delta=float(delta), eps=float(epsilon_convexity),
        K0=float(epsilon_convexity), K1=K1, K2=K2,
        name=f"pseudo_l1(delta={delta:g}, eps={epsilon_convexity:g})",
    )


def _curvature_ratio_max(loss: LossSpec, lo: float, hi: float, num: int = 200_001) -> float:
    """Upper estimate of max |psi''| / sqrt(psi') on ``[lo, hi]`` (x >= 0 suffices by symmetry)."""
    grid = np.linspace(lo, hi, num)

    def ratio(x):
        _, _, d1, d2 = loss.evaluate(np.atleast_1d(x))
        return np.abs(d2) / np.sqrt(d1)

    values = ratio(grid)
    best = int(np.argmax(values))
    step = grid[1] - grid[0]
    a, b = max(lo, grid[best] - step), min(hi, grid[best] + step)
    res = optimize.minimize_scalar(lambda x: -ratio(x)[0], bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-13})
    peak = max(float(values[best]), -float(res.fun))
    # headroom for the grid/optimizer resolution
    return peak * (1.0 + 1e-9) + 1e-15


def huber_exact_rho(x, k: float = DEFAULT_HUBER_K):
    """Exact Huber loss: x^2/2 for |x| <= k, k(|x| - k/2) otherwise."""
    a = np.abs(np.asarray(x, dtype=float))
    out = np.where(a <= k, 0.5 * a * a, k * (a - 0.5 * k))
    return float(out) if np.ndim(x) == 0 else out


def huber_exact_psi(x, k: float = DEFAULT_HUBER_K):
    out = np.clip(np.asarray(x, dtype=float), -k, k)
    return float(out) if np.ndim(x) == 0 else out


def a1_certificate(loss: LossSpec, lo: float = -100.0, hi: float = 100.0, num: int = 1_000_000) -> dict:
    """Scan a dense grid for violations of the curvature constants.

    Returns counts of points with ``psi' < K0``, ``psi' > K1`` or
    ``|psi''| > K2 sqrt(psi')`` together with the observed extremes.
    """
    x = np.linspace(lo, hi, num)
    r, p, d1, d2 = loss.evaluate(x)
    ratio = np.abs(d2) / np.sqrt(d1)
    return {
        "points": num,
        "psi1_min": float(d1.min()),
        "psi1_max": float(d1.max()),
        "ratio_max": float(ratio.max()),
        "below_K0": int(np.count_nonzero(d1 < loss.K0)),
        "above_K1": int(np.count_nonzero(d1 > loss.K1)),
        "above_K2": int(np.count_nonzero(ratio > loss.K2)),
        "rho_at_0": float(loss.rho(0.0)),
        "psi_at_0": float(loss.psi(0.0)),
        "ok": bool(
            np.all(d1 >= loss.K0) and np.all(d1 <= loss.K1) and np.all(ratio <= loss.K2)
            and loss.rho(0.0) == 0.0 and loss.psi(0.0) == 0.0
        ),
    }


_CALL = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*(?:\((.*)\))?\s*$")


def _parse_args(body: str, names: list[str]) -> dict:
    values: dict[str, float] = {}
    if not body or not body.strip():
        return values
    for pos, item in enumerate(part.strip() for part in body.split(",")):
        if not item:
            continue
        if "=" in item:
            key, raw = (s.strip() for s in item.split("=", 1))
            if key not in names:
                raise InvalidSpec(f"unknown loss parameter {key!r}; expected one of {names}")
        else:
            if pos >= len(names):
                raise InvalidSpec(f"too many positional loss parameters in {body!r}")
            key, raw = names[pos], item
        try:
            values[key] = float(raw)
        except ValueError:
            raise InvalidSpec(f"loss parameter {key!r} is not a number: {raw!r}") from None
    return values


def parse_loss(text: str) -> LossSpec:
    """Build a :class:`LossSpec` from a loss string (grammar in the module docstring)."""
    m = _CALL.match(text)
    if not m:
        raise InvalidSpec(f"cannot parse loss {text!r}")
    name = m.group(1).lower().replace("-", "_")
    body = m.group(2) or ""
    if name in ("square", "ls", "l2"):
        if body.strip():
            raise InvalidSpec("square loss takes no parameters")
        return make_square()
    if name in ("huber", "smoothed_huber"):
        args = _parse_args(body, ["k", "eps", "delta"])
        return make_smoothed_huber(
            k=args.get("k", DEFAULT_HUBER_K),
            epsilon_convexity=args.get("eps", DEFAULT_EPS),
            delta=args.get("delta", DEFAULT_DELTA),
        )
    if name in ("pseudo_l1", "l1", "smoothed_l1"):
        args = _parse_args(body, ["delta", "eps"])
        return make_pseudo_l1(delta=args.get("delta", DEFAULT_DELTA),
                              epsilon_convexity=args.get("eps", DEFAULT_EPS))
    raise InvalidSpec(f"unknown loss {name!r}; expected square, huber or pseudo_l1")
