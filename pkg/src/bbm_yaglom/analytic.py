"""Closed-form quantities for the strip-killed process near critical drift.

Covers the moving ceiling ``L_t(s) = c (t - s)^(1/3)``, the weight
``z(x, L)`` and its derivatives, the intrinsic time ``tau``, the transition
density ``w_s`` of Brownian motion killed at 0 and 1, the density
approximation ``q``, the limiting profile densities and the large-time
survival asymptotic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)
C_CEIL = (3.0 * math.pi**2) ** (1.0 / 3.0) / SQRT2
S_SWITCH = 0.2

__all__ = [
    "SQRT2",
    "C_CEIL",
    "BoundaryCurve",
    "SeriesControl",
    "SeriesError",
    "L_of",
    "z_weight",
    "y_weight",
    "dz_dx",
    "dz_dL",
    "tau",
    "w_density",
    "w_eigen",
    "w_images",
    "q_approx",
    "girsanov_tilt",
    "reference_density",
    "hh_asymptotic",
]


class SeriesError(RuntimeError):
    """Raised when a series cannot meet its tolerance within the term cap."""


@dataclass(frozen=True)
class BoundaryCurve:
    """The ceiling ``s -> c (t - s)^(1/3)`` for a horizon ``t``."""

    t: float
    c: float = C_CEIL

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("horizon t must be positive")

    def __call__(self, s):
        return L_of(self, s)


@dataclass(frozen=True)
class SeriesControl:
    abs_tol: float = 1e-12
    n_max: int = 10_000

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")


def L_of(curve: BoundaryCurve, s):
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > curve.t * (1 + 1e-15)):
        raise ValueError("need 0 <= s <= t")
    out = curve.c * np.cbrt(np.maximum(curve.t - s_arr, 0.0))
    return float(out) if out.ndim == 0 else out


def z_weight(x, L):
    """``sqrt(2) L exp(sqrt(2)(x - L)) sin(pi x / L)`` on ``0 < x < L``, else 0."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < L)
    xs = np.where(inside, x, 0.5 * L)
    out = np.where(inside, SQRT2 * L * np.exp(SQRT2 * (xs - L)) * np.sin(np.pi * xs / L), 0.0)
    return float(out) if out.ndim == 0 else out


def y_weight(x, L):
    x = np.asarray(x, dtype=float)
    out = (x / L) * np.exp(SQRT2 * (x - L))
    return float(out) if out.ndim == 0 else out


def _interior(x, L):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x >= L):
        raise ValueError("derivatives of z need 0 < x < L")
    return x


def dz_dx(x, L):
    x = _interior(x, L)
    a = np.pi * x / L
    out = z_weight(x, L) * (SQRT2 + (np.pi / L) * np.cos(a) / np.sin(a))
    return float(out) if np.ndim(out) == 0 else out


def dz_dL(x, L):
    x = _interior(x, L)
    a = np.pi * x / L
    out = -z_weight(x, L) * (SQRT2 + (np.pi * x / L**2) * np.cos(a) / np.sin(a) - 1.0 / L)
    return float(out) if np.ndim(out) == 0 else out


def tau(curve: BoundaryCurve, r, s):
    """Intrinsic time ``int_r^s L_t(u)^-2 du`` in closed form."""
    r_a, s_a = np.asarray(r, dtype=float), np.asarray(s, dtype=float)
    if np.any(r_a < 0) or np.any(s_a < r_a) or np.any(s_a >= curve.t):
        raise ValueError("need 0 <= r <= s < t")
    # (t - u)^(-2/3) / c^2 integrates to 3 (t - u)^(1/3) / c^2
    out = 3.0 / curve.c**3 * (L_of(curve, r_a) - L_of(curve, s_a))
    return float(out) if np.ndim(out) == 0 else out


def _eigen_tail(s, n, sx, sy):
    """Certified bound on ``2 sum_{k>n} e^{-pi^2 k^2 s/2} |sin(k pi x) sin(k pi y)|``.

    Uses the smaller of the plain bound (|sin| <= 1) and the bound with
    ``|sin(k pi x)| <= k |sin(pi x)|`` that mirrors the classical estimate on
    the remainder of the leading eigenterm.
    """
    a = np.pi**2 * s / 2.0
    k0 = n + 1
    ratio = math.exp(-a * (2 * k0 + 1))
    if ratio >= 1.0:
        return math.inf
    plain = 2.0 * math.exp(-a * k0 * k0) / (1.0 - ratio)
    # k^2 e^{-a k^2} is eventually decreasing; bound the sum by its first term
    # times a geometric factor once the term ratio is below one
    q = ((k0 + 1) / k0) ** 2 * ratio
    if q < 1.0:
        weighted = 2.0 * sx * sy * k0 * k0 * math.exp(-a * k0 * k0) / (1.0 - q)
    else:
        weighted = math.inf
    return min(plain, weighted)


def w_eigen(s, x, y, ctl: SeriesControl = SeriesControl()):
    """Eigenfunction series for ``w_s(x, y)`` truncated with a certified tail."""
    if not s > 0:
        raise ValueError("s must be positive")
    sx, sy = abs(math.sin(math.pi * x)), abs(math.sin(math.pi * y))
    total = 0.0
    for n in range(1, ctl.n_max + 1):
        total += 2.0 * math.exp(-np.pi**2 * n * n * s / 2.0) * math.sin(n * math.pi * x) * math.sin(n * math.pi * y)
        if _eigen_tail(s, n, sx, sy) <= ctl.abs_tol:
            return total
    raise SeriesError(f"eigen series for s={s} did not reach {ctl.abs_tol} in {ctl.n_max} terms")


def w_images(s, x, y, ctl: SeriesControl = SeriesControl()):
    """Method-of-images sum for ``w_s(x, y)``.

    ``sum_k [phi_s(y - x + 2k) - phi_s(y + x + 2k)]`` with Gaussian kernel
    ``phi_s``; terms are added symmetrically in ``k`` until a Gaussian tail
    bound drops below the tolerance.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    norm = 1.0 / math.sqrt(2.0 * math.pi * s)

    def phi(u):
        return norm * math.exp(-u * u / (2.0 * s))

    total = phi(y - x) - phi(y + x)
    for k in range(1, ctl.n_max + 1):
        total += phi(y - x + 2 * k) - phi(y + x + 2 * k) + phi(y - x - 2 * k) - phi(y + x - 2 * k)
        # all remaining shifts are at distance >= 2k from the unit interval
        d = 2.0 * k
        tail = 4.0 * norm * math.exp(-d * d / (2.0 * s)) / (1.0 - math.exp(-2.0 * d / s))
        if tail <= ctl.abs_tol:
            return total
    raise SeriesError(f"image sum for s={s} did not reach {ctl.abs_tol} in {ctl.n_max} terms")


def w_density(s, x, y, ctl: SeriesControl = SeriesControl()):
    """Transition density of Brownian motion killed at 0 and 1.

    Eigen-series for ``s >= 0.2``, image sum below that. Returns 0 outside
    the open unit square.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    if not (0 < x < 1 and 0 < y < 1):
        return 0.0
    val = w_eigen(s, x, y, ctl) if s >= S_SWITCH else w_images(s, x, y, ctl)
    return max(val, 0.0)


def girsanov_tilt(rho, r, s, x, y):
    eps = rho - SQRT2
    return math.exp(eps * (x - y) - SQRT2 * eps * (s - r) - eps * eps * (s - r) / 2.0)


def q_approx(curve: BoundaryCurve, rho, r, s, x, y, ctl: SeriesControl = SeriesControl()):
    """Approximate density of descendants at ``y`` (time ``s``) from ``x`` (time ``r``)
    in the process killed at 0 and at the ceiling, with drift ``-rho``.

    The ``exp(O((t - s)^(-1/3)))`` correction is set to one.
    """
    if not (0 <= r < s < curve.t):
        raise ValueError("need 0 <= r < s < t")
    if rho < SQRT2:
        raise ValueError("rho must be >= sqrt(2)")
    Lr, Ls = L_of(curve, r), L_of(curve, s)
    if not (0 < x < Lr and 0 < y < Ls):
        raise ValueError("x and y must lie strictly inside the strip")
    base = math.exp(SQRT2 * (x - y)) / math.sqrt(Lr * Ls) * w_density(tau(curve, r, s), x / Lr, y / Ls, ctl)
    return base * girsanov_tilt(rho, r, s, x, y)


def reference_density(kind: str, y):
    """Limit densities ``h1(y) = 2 y exp(-sqrt2 y)`` and ``h2(y) = pi/2 sin(pi y)``."""
    y = np.asarray(y, dtype=float)
    if kind == "h1":
        out = np.where(y > 0, 2.0 * y * np.exp(-SQRT2 * np.maximum(y, 0.0)), 0.0)
    elif kind == "h2":
        out = np.where((y > 0) & (y < 1), 0.5 * np.pi * np.sin(np.pi * y), 0.0)
    else:
        raise ValueError(f"unknown density {kind!r}")
    return float(out) if out.ndim == 0 else out


def reference_cdf(kind: str, y):
    y = np.asarray(y, dtype=float)
    if kind == "h1":
        yp = np.maximum(y, 0.0)
        out = 1.0 - (1.0 + SQRT2 * yp) * np.exp(-SQRT2 * yp)
    elif kind == "h2":
        yc = np.clip(y, 0.0, 1.0)
        out = 0.5 * (1.0 - np.cos(np.pi * yc))
    else:
        raise ValueError(f"unknown density {kind!r}")
    return float(out) if out.ndim == 0 else out


def hh_asymptotic(x, t, rho, K):
    """``K / (sqrt(2 pi) t^1.5) x exp(rho x + (1 - rho^2/2) t)``."""
    return K / (math.sqrt(2 * math.pi) * t**1.5) * x * math.exp(rho * x + (1 - rho * rho / 2) * t)
