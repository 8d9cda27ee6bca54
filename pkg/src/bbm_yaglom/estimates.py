"""Monte Carlo estimates with standard errors and the small statistics toolkit."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

__all__ = ["EstimateWithCI", "mean_estimate", "proportion_estimate", "ratio_z", "chi2_two_sample", "pooled_z"]

Z95 = 1.959963984540054


@dataclass(frozen=True)
class EstimateWithCI:
    """Point estimate, standard error and a 95% interval from ``n`` replicas."""

    estimate: float
    stderr: float
    n: int
    lower: float
    upper: float
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def scaled(self, k: float) -> "EstimateWithCI":
        lo, hi = sorted((self.lower * k, self.upper * k))
        return EstimateWithCI(self.estimate * k, self.stderr * abs(k), self.n, lo, hi, dict(self.params))


def mean_estimate(values, params: dict | None = None) -> EstimateWithCI:
    v = np.asarray(values, dtype=float)
    if v.size < 1:
        raise ValueError("need at least one replica")
    m = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.inf
    return EstimateWithCI(m, se, int(v.size), m - Z95 * se, m + Z95 * se, dict(params or {}))


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def proportion_estimate(k: int, n: int, params: dict | None = None) -> EstimateWithCI:
    """Frequency ``k / n`` with binomial standard error and a Wilson interval."""
    if n < 1:
        raise ValueError("need at least one replica")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    p = k / n
    lo, hi = wilson_interval(k, n)
    return EstimateWithCI(p, math.sqrt(p * (1 - p) / n), int(n), lo, hi, dict(params or {}))


def pooled_z(a: EstimateWithCI, b: EstimateWithCI) -> float:
    """Difference of two independent estimates in units of their pooled SE."""
    se = math.hypot(a.stderr, b.stderr)
    if se == 0:
        return 0.0 if a.estimate == b.estimate else math.inf
    return (a.estimate - b.estimate) / se


def ratio_z(value: float, target: float, se: float) -> float:
    return (value - target) / se if se > 0 else (0.0 if value == target else math.inf)


def chi2_two_sample(a, b, min_expected: float = 5.0):
    """Two-sample chi-square homogeneity test on integer-valued samples.

    Categories are merged from the top until every expected count is at least
    ``min_expected``. Returns ``(statistic, dof, p_value, edges)``.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    hi = int(max(a.max(initial=0), b.max(initial=0)))
    ca = np.bincount(a, minlength=hi + 1).astype(float)
    cb = np.bincount(b, minlength=hi + 1).astype(float)
    na, nb = ca.sum(), cb.sum()
    # greedy left-to-right pooling of values into cells
    cells_a, cells_b, edges = [], [], []
    acc_a = acc_b = 0.0
    start = 0
    for v in range(hi + 1):
        acc_a += ca[v]
        acc_b += cb[v]
        n_cell = acc_a + acc_b
        if min(n_cell * na, n_cell * nb) / (na + nb) >= min_expected:
            cells_a.append(acc_a)
            cells_b.append(acc_b)
            edges.append(start)
            acc_a = acc_b = 0.0
            start = v + 1
    if acc_a + acc_b > 0:
        if cells_a:
            cells_a[-1] += acc_a
            cells_b[-1] += acc_b
        else:
            cells_a.append(acc_a)
            cells_b.append(acc_b)
            edges.append(start)
    if len(cells_a) < 2:
        return 0.0, 0, 1.0, edges
    table = np.array([cells_a, cells_b])
    stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return float(stat), int(dof), float(p), edges
