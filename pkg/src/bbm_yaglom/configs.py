"""Point configurations and the functionals evaluated on them."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import brentq

from .analytic import C_CEIL, SQRT2, z_weight, y_weight

__all__ = [
    "PointConfiguration",
    "EmpiricalMeasure",
    "count_N",
    "max_M",
    "chi",
    "eta",
    "Z_value",
    "Y_value",
    "T_of_nu",
    "shift_config",
    "dominates",
    "W_stat",
    "W_weights",
]


class PointConfiguration:
    """A finite multiset of positive particle positions.

    Positions are kept sorted, so equality is multiset equality. The empty
    configuration is the absorbed state.
    """

    __slots__ = ("_x",)

    def __init__(self, positions: Iterable[float] = ()):
        x = np.sort(np.asarray(list(positions) if not isinstance(positions, np.ndarray) else positions, dtype=float).ravel())
        if x.size and (not np.all(np.isfinite(x)) or x[0] <= 0):
            raise ValueError("positions must be finite and strictly positive")
        x.setflags(write=False)
        self._x = x

    @classmethod
    def _trusted(cls, sorted_x: np.ndarray) -> "PointConfiguration":
        obj = cls.__new__(cls)
        sorted_x = np.asarray(sorted_x, dtype=float)
        sorted_x.setflags(write=False)
        obj._x = sorted_x
        return obj

    @property
    def positions(self) -> np.ndarray:
        return self._x

    def __len__(self):
        return int(self._x.size)

    def __bool__(self):
        return self._x.size > 0

    def __iter__(self):
        return iter(self._x.tolist())

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return self._x.shape == other._x.shape and bool(np.all(self._x == other._x))

    def __hash__(self):
        return hash(self._x.tobytes())

    def __repr__(self):
        if self._x.size <= 6:
            return f"PointConfiguration({self._x.tolist()})"
        return f"PointConfiguration(<{self._x.size} particles, max={self._x[-1]:.4g}>)"

    def union(self, other: "PointConfiguration") -> "PointConfiguration":
        return PointConfiguration._trusted(np.sort(np.concatenate([self._x, other._x])))

    __or__ = union

    def tail_count(self, y: float) -> int:
        """Number of particles in ``[y, inf)``."""
        return int(self._x.size - np.searchsorted(self._x, y, side="left"))


@dataclass(frozen=True)
class EmpiricalMeasure:
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.locations.shape != self.weights.shape:
            raise ValueError("locations and weights must align")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def cdf(self, y) -> np.ndarray:
        order = np.argsort(self.locations, kind="stable")
        loc, cw = self.locations[order], np.cumsum(self.weights[order])
        idx = np.searchsorted(loc, np.asarray(y, dtype=float), side="right")
        return np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["location", "weight"])
        for a, b in zip(self.locations, self.weights):
            w.writerow([repr(float(a)), repr(float(b))])
        return buf.getvalue()


def _merge(loc: np.ndarray, wt: np.ndarray) -> EmpiricalMeasure:
    # exact-equality merge of atoms
    u, inv = np.unique(loc, return_inverse=True)
    return EmpiricalMeasure(u, np.bincount(inv, weights=wt, minlength=u.size))


def _nonempty(nu: PointConfiguration):
    if not nu:
        raise ValueError("configuration is empty")
    return nu.positions


def count_N(nu: PointConfiguration) -> int:
    return len(nu)


def max_M(nu: PointConfiguration) -> float:
    return float(_nonempty(nu)[-1])


def chi(nu: PointConfiguration) -> EmpiricalMeasure:
    """Normalised empirical measure of positions."""
    x = _nonempty(nu)
    return _merge(x, np.full(x.size, 1.0 / x.size))


def eta(nu: PointConfiguration) -> EmpiricalMeasure:
    """Rescaled positions ``x / M`` weighted proportionally to ``exp(sqrt2 x)``."""
    x = _nonempty(nu)
    w = np.exp(SQRT2 * (x - x[-1]))
    return _merge(x / x[-1], w / w.sum())


def Z_value(nu: PointConfiguration, L: float, cutoff: float | None = None) -> float:
    if not L > 0:
        raise ValueError("L must be positive")
    x = nu.positions
    if cutoff is not None:
        x = x[x <= cutoff]
    return float(np.sum(z_weight(x, L))) if x.size else 0.0


def Y_value(nu: PointConfiguration, L: float) -> float:
    if not L > 0:
        raise ValueError("L must be positive")
    x = nu.positions
    return float(np.sum(y_weight(x, L))) if x.size else 0.0


def T_of_nu(nu: PointConfiguration, rtol: float = 1e-10) -> float:
    """Smallest ``t`` with ``c t^(1/3) >= M + 2`` and ``Z(nu, c t^(1/3)) <= 1/2``.

    Above ``L = M + 2`` the sum ``Z`` is strictly decreasing in ``L``, so the
    second constraint is solved by bracketing and root finding.
    """
    M = max_M(nu)
    L0 = M + 2.0
    t_min = (L0 / C_CEIL) ** 3
    if Z_value(nu, L0) <= 0.5:
        return t_min

    def g(t):
        return Z_value(nu, C_CEIL * np.cbrt(t)) - 0.5

    lo, hi = t_min, 2.0 * t_min
    while g(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise RuntimeError("could not bracket T")
    return float(brentq(g, lo, hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=500))


def shift_config(nu: PointConfiguration, delta: float) -> PointConfiguration:
    """Drop particles in ``(0, delta]`` and translate the rest down by ``delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = nu.positions
    return PointConfiguration._trusted(x[x > delta] - delta)


def dominates(nu1: PointConfiguration, nu2: PointConfiguration) -> bool:
    """Whether every upper tail count of ``nu1`` is at least that of ``nu2``."""
    a, b = nu1.positions, nu2.positions
    if a.size < b.size:
        return False
    if b.size == 0:
        return True
    # k-th largest of nu1 must be >= k-th largest of nu2
    return bool(np.all(a[::-1][: b.size] >= b[::-1]))


def W_weights(nu, t: float, rho: float) -> np.ndarray:
    """Per-particle terms of the additive martingale.

    ``nu`` may also be a plain array, since the process without absorption
    can have particles at or below 0.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    x = nu.positions if isinstance(nu, PointConfiguration) else np.asarray(nu, dtype=float)
    return np.exp(rho * x - (1.0 - rho * rho / 2.0) * t)


def W_stat(nu, t: float, rho: float) -> float:
    """``sum exp(rho x - (1 - rho^2/2) t)`` over the particles."""
    return float(W_weights(nu, t, rho).sum())
