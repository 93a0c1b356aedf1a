"""Pure-numpy versions of the elementwise kernels.

Each ``*_eval`` fills ``rho, psi, psi1, psi2`` in place with the loss and its
first three derivatives evaluated at ``x``.

Smoothed Huber: on ``|x| <= k - delta`` the loss is quadratic, on
``|x| >= k + delta`` it is linear with slope ``k``, and in between the
curvature ``w = psi'`` falls from 1 to 0 along the cubic ``1 - 3t^2 + 2t^3``
with ``t = (|x| - k + delta) / (2 delta)``. ``psi'`` is therefore C^1 and
``psi`` is C^2. Integrating once and twice gives ``psi`` and ``rho``; the
linear branch reaches ``psi = k`` exactly. A convexifying ``eps x^2 / 2``
is added on top.

Pseudo-L1: ``delta * (sqrt(1 + (x/delta)^2) - 1) + eps x^2 / 2``.
"""
import numpy as np


def square_eval(x, rho, psi, psi1, psi2):
    rho[:] = 0.5 * x * x
    psi[:] = x
    psi1[:] = 1.0
    psi2[:] = 0.0


def smoothed_huber_eval(x, k, delta, eps, rho, psi, psi1, psi2):
    a0 = k - delta
    a1 = k + delta
    L = 2.0 * delta
    c1 = 0.5 * a0 * a0 + L * (a0 + 0.35 * L)
    a = np.abs(x)
    s = np.sign(x)
    inner = a <= a0
    outer = a >= a1
    t = np.clip((a - a0) / L, 0.0, 1.0)
    t2 = t * t
    rb = np.where(
        inner,
        0.5 * a * a,
        np.where(
            outer,
            c1 + k * (a - a1),
            0.5 * a0 * a0 + L * (a0 * t + L * (0.5 * t2 - 0.25 * t2 * t2 + 0.1 * t2 * t2 * t)),
        ),
    )
    pb = np.where(inner, a, np.where(outer, k, a0 + L * (t - t2 * t + 0.5 * t2 * t2)))
    w = np.where(inner, 1.0, np.where(outer, 0.0, 1.0 - 3.0 * t2 + 2.0 * t2 * t))
    dw = np.where(inner | outer, 0.0, -6.0 * t * (1.0 - t) / L)
    rho[:] = rb + 0.5 * eps * x * x
    psi[:] = s * pb + eps * x
    psi1[:] = w + eps
    psi2[:] = s * dw


def pseudo_l1_eval(x, delta, eps, rho, psi, psi1, psi2):
    u = x / delta
    q2 = 1.0 + u * u
    q = np.sqrt(q2)
    rho[:] = delta * (u * u / (q + 1.0)) + 0.5 * eps * x * x
    psi[:] = u / q + eps * x
    psi1[:] = 1.0 / (delta * q2 * q) + eps
    psi2[:] = -3.0 * u / (delta * delta * q2 * q2 * q)


def sup_distance_sorted(a, b):
    """sup_x |F_a(x) - F_b(x)| for two ascending samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
