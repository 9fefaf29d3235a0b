"""Model problems on the quarter annulus."""
from __future__ import annotations

import numpy as np


def annulus_manufactured(r0: float = 1.0, r1: float = 2.0):
    """``u = (r^2 - r0^2)(r1^2 - r^2) sin(2 theta)`` and ``f = -lap u``.

    ``u`` vanishes on both arcs and on both straight edges of the quarter
    annulus, so homogeneous Dirichlet data apply everywhere.
    """
    a, b = r0 * r0, r1 * r1

    def u(x, y):
        r2 = x * x + y * y
        return (r2 - a) * (b - r2) * 2.0 * x * y / r2

    def f(x, y):
        r2 = x * x + y * y
        return 2.0 * x * y / r2 * (12.0 * r2 - 4.0 * a * b / r2)

    return u, f


def constant_rhs(value: float = 1.0):
    return lambda x, y: np.full(np.broadcast(x, y).shape, float(value))
