"""Convex bounds used to build the iterative approximation subproblems.

Three primitives cover every nonconvexity in the design problem:

* ``bilinear_upper``: convex quadratic overestimator of a product x*y,
* ``bilinear_lower``: concave quadratic underestimator of x*y,
* ``log_sinr_lower``: concave underestimator of log2(1 + A^2 / B).

All three are tight (value and gradient) at the expansion point, which is
what makes the outer loop monotone.
"""

from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)


def bilinear_upper(x, y, x0, y0):
    """Convex overestimator of x*y around (x0, y0).

    0.25 * ((x + y)^2 - 2 (x0 - y0)(x - y) + (x0 - y0)^2) >= x*y for all
    (x, y), with equality at the expansion point.
    """
    d0 = x0 - y0
    return 0.25 * ((x + y) ** 2 - 2.0 * d0 * (x - y) + d0 ** 2)


def bilinear_lower(x, y, x0, y0):
    """Concave underestimator of x*y around (x0, y0).

    -0.25 * ((x - y)^2 - 2 (x0 + y0)(x + y) + (x0 + y0)^2) <= x*y for all
    (x, y), with equality at the expansion point.
    """
    s0 = x0 + y0
    return -0.25 * ((x - y) ** 2 - 2.0 * s0 * (x + y) + s0 ** 2)


def log_sinr_lower_coeffs(a0, b0):
    """Coefficients (c0, ca, cq) of the concave rate bound around (a0, b0).

    The bound reads  c0 + ca * A - cq * (A^2 + B) <= log2(1 + A^2 / B).
    Requires a0 > 0 and b0 > 0.
    """
    a0 = np.asarray(a0, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    if np.any(a0 <= 0) or np.any(b0 <= 0):
        raise ValueError("expansion point must have a0 > 0 and b0 > 0")
    s0 = a0 ** 2 / b0
    c0 = (np.log1p(s0) - s0) / LN2
    ca = 2.0 * a0 / (b0 * LN2)
    cq = a0 ** 2 / (b0 * (a0 ** 2 + b0) * LN2)
    return c0, ca, cq


def log_sinr_lower(a, b, a0, b0):
    """Concave underestimator of log2(1 + A^2 / B) around (a0, b0) > 0.

    Affine in B and concave quadratic in A; equals the true rate at the
    expansion point and never exceeds it for A, B > 0.
    """
    c0, ca, cq = log_sinr_lower_coeffs(a0, b0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return c0 + ca * a - cq * (a ** 2 + b)
