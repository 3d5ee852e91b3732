"""Closed-form attribution values on the 2-variable sinusoidal model
``f(x) = 2 cos(pi x1) cos(pi x2)``.

These are the ground truth the numeric methods are verified against.  Each
function implements one analytic formula and refuses inputs outside the
regime the formula was derived for, rather than extrapolating.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "OracleDomainError",
    "surface",
    "oracle_lime0",
    "oracle_gpa",
    "oracle_ig",
    "oracle_sv",
]


class OracleDomainError(ValueError):
    """Query outside the regime a closed form is valid in."""


def _pair(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError("expected a 2-vector")
    return x


def surface(x) -> float:
    x = _pair(x)
    return float(2.0 * np.cos(np.pi * x[0]) * np.cos(np.pi * x[1]))


def oracle_lime0(x_t) -> np.ndarray:
    """Analytic gradient: (-2 pi sin(pi x1) cos(pi x2),
    -2 pi cos(pi x1) sin(pi x2))."""
    x = _pair(x_t)
    return np.array(
        [
            -2.0 * np.pi * np.sin(np.pi * x[0]) * np.cos(np.pi * x[1]),
            -2.0 * np.pi * np.cos(np.pi * x[0]) * np.sin(np.pi * x[1]),
        ]
    )


def oracle_gpa(x_t, y_t: float) -> np.ndarray:
    """Counterfactual-shift solution ((1/pi) arccos(y/2) - x1, 0).

    Valid only for x2 = 0, x1 > 0 and |y| < 2 -- the branch reached by a
    solver initialized near zero with a positive l1 term.
    """
    x = _pair(x_t)
    if x[1] != 0.0:
        raise OracleDomainError("closed form requires x2 = 0")
    if x[0] <= 0.0:
        raise OracleDomainError("closed form requires x1 > 0")
    if abs(y_t) >= 2.0:
        raise OracleDomainError("|y| must be < 2 (the surface range)")
    return np.array([np.arccos(y_t / 2.0) / np.pi - x[0], 0.0])


def oracle_ig(x_t, x_0) -> np.ndarray:
    """Analytic path integral between two points.

    With d = x_t - x_0, G^k = cos(pi(x1^k + x2^k)) / (d1 + d2) and
    H^k = cos(pi(x1^k - x2^k)) / (d1 - d2),

        IG_i = d_i [G^t - G^0 - (-1)^i (H^t - H^0)].

    Paths with d1 = +-d2 make a denominator vanish; use numeric quadrature
    for those.
    """
    xt = _pair(x_t)
    x0 = _pair(x_0)
    d = xt - x0
    if d[0] + d[1] == 0.0 or d[0] - d[1] == 0.0:
        raise OracleDomainError(
            "singular path (d1 = +-d2); use the numeric quadrature instead"
        )

    def g(x):
        return np.cos(np.pi * (x[0] + x[1])) / (d[0] + d[1])

    def h(x):
        return np.cos(np.pi * (x[0] - x[1])) / (d[0] - d[1])

    dg = g(xt) - g(x0)
    dh = h(xt) - h(x0)
    return np.array([d[0] * (dg + dh), d[1] * (dg - dh)])


def oracle_sv(x_t) -> np.ndarray:
    """Shapley values under a uniform reference over [-m, m]^2 with integer
    m: both coordinates get f(x_t)/2."""
    f = surface(x_t)
    return np.array([f / 2.0, f / 2.0])
