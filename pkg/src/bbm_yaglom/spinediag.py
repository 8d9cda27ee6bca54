"""Forward spine identities as statistical checks.

Two identities are exercised here. Biasing plain branching Brownian motion
(no barrier) by the additive martingale gives the process with a driftless
spine that branches at rate 2, and given the tree the spine is picked with
softmax weights ``e^{rho X}``. The second identity rewrites the law at time
``t`` of the absorbed process as an integral over a spine endpoint ``z`` of
bridge constructions that are kept when nothing ends above ``z``.

Neither is used by the production sampler; both are cross-checks between
independent simulators.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special, stats

from . import _kernels as K
from .engine import SimParams, simulate_batch
from .estimates import EstimateWithCI, mean_estimate, pooled_z, ratio_z
from .rng import RandomStream

__all__ = [
    "SpineWeightRecord",
    "DiagReport",
    "verify_W_martingale",
    "verify_spine_selection",
    "verify_bridge_representation",
    "bridge_prefactor",
    "bridge_nodes",
]

Z_TOL = 3.0
LEVEL = 0.01


@dataclass
class SpineWeightRecord:
    """Martingale terms of one configuration at time ``t``."""

    t: float
    weights: np.ndarray
    W: float

    @classmethod
    def from_positions(cls, x, t: float, rho: float) -> "SpineWeightRecord":
        w = np.exp(rho * np.asarray(x, dtype=float) - (1.0 - rho * rho / 2.0) * t)
        return cls(float(t), w, float(w.sum()))

    def selection_probs(self) -> np.ndarray:
        return self.weights / self.W


@dataclass
class DiagReport:
    name: str
    passed: bool
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "rows": self.rows, "details": self.details}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _row(name, a: EstimateWithCI, b: EstimateWithCI) -> dict:
    z = pooled_z(a, b)
    return {"functional": name, "lhs": a.estimate, "lhs_se": a.stderr, "rhs": b.estimate, "rhs_se": b.stderr,
            "z": z, "passed": bool(abs(z) <= Z_TOL)}


def _free(params: SimParams) -> SimParams:
    return SimParams(rho=params.rho, max_population=params.max_population, absorb=False)


def _group_max(rep, pos, n, fill):
    out = np.full(n, fill)
    np.maximum.at(out, rep, pos)
    return out


def verify_W_martingale(params: SimParams, x: float, times=(0.5, 1.0, 2.0), n: int = 100_000,
                        stream: RandomStream | None = None) -> DiagReport:
    """``e^{-rho x} E[W_t] = 1`` for the process without the barrier, at each time."""
    stream = stream or RandomStream(0)
    rho = params.rho
    rows = []
    for i, t in enumerate(times):
        res = simulate_batch(_free(params), stream.child(i), np.arange(n + 1), np.full(n, float(x)), stop=float(t))
        if res.censored.any():
            raise OverflowError("population cap reached")
        w = np.bincount(res.final_rep, weights=np.exp(rho * res.final_pos), minlength=n)
        vals = w * math.exp(-rho * x - (1.0 - rho * rho / 2.0) * t)
        est = mean_estimate(vals, {"t": t})
        z = ratio_z(est.estimate, 1.0, est.stderr)
        rows.append({"t": float(t), "mean": est.estimate, "se": est.stderr, "z": z, "passed": bool(abs(z) <= Z_TOL)})
    return DiagReport("W_martingale", all(r["passed"] for r in rows), rows, {"rho": rho, "x": x, "n": n})


def _battery(counts, maxima, x):
    """Bounded functionals of a configuration: 1, 1{N=1}, min(N, 10), clipped max."""
    return {
        "one": np.ones(counts.size),
        "N_eq_1": (counts == 1).astype(float),
        "N_min_10": np.minimum(counts, 10).astype(float),
        "max_clipped": np.clip(maxima - x, -3.0, 3.0),
    }


def verify_spine_selection(params: SimParams, x: float, t: float, n: int = 100_000,
                           stream: RandomStream | None = None, bins: int = 10) -> DiagReport:
    """Compare the martingale-biased process with the spine process.

    Left side: ``e^{-rho x} E[W_t F]`` from plain branching Brownian motion
    with drift ``-rho``. Right side: ``E[F]`` with a driftless spine branching
    at rate 2 whose children are ordinary copies of the process. The spine
    label is also checked against the softmax weights with a randomized
    probability integral transform and a chi-square test.
    """
    if not params.rho >= 0:
        raise ValueError("rho must be non-negative")
    if not t > 0:
        raise ValueError("t must be positive")
    stream = stream or RandomStream(0)
    rho = params.rho
    free = _free(params)

    plain = simulate_batch(free, stream.child(0), np.arange(n + 1), np.full(n, float(x)), stop=float(t))
    if plain.censored.any():
        raise OverflowError("population cap reached")
    w = np.bincount(plain.final_rep, weights=np.exp(rho * plain.final_pos), minlength=n)
    bias = w * math.exp(-rho * x - (1.0 - rho * rho / 2.0) * t)
    lhs = _battery(plain.final_counts, _group_max(plain.final_rep, plain.final_pos, n, -np.inf), x)

    g = stream.child(1)
    off, b_t, b_x, ends = K.bm_spine_births(g.gen, float(x), float(t), n, 2.0)
    kids = simulate_batch(free, stream.child(2), off, b_x, stop=float(t), start=b_t)
    if kids.censored.any():
        raise OverflowError("population cap reached")
    counts = kids.final_counts + 1
    maxima = np.maximum(_group_max(kids.final_rep, kids.final_pos, n, -np.inf), ends)
    rhs = _battery(counts, maxima, x)

    rows = [_row(k, mean_estimate(lhs[k] * bias), mean_estimate(rhs[k])) for k in lhs]

    # randomized PIT of the spine among all particles, ordered by position
    wk = np.exp(rho * (kids.final_pos - maxima[kids.final_rep]))
    ws = np.exp(rho * (ends - maxima))
    below = np.bincount(kids.final_rep, weights=wk * (kids.final_pos < ends[kids.final_rep]), minlength=n)
    total = np.bincount(kids.final_rep, weights=wk, minlength=n) + ws
    u = (below + g.random(n) * ws) / total
    observed = np.bincount(np.minimum((u * bins).astype(int), bins - 1), minlength=bins)
    chi = stats.chisquare(observed)
    pit = {"statistic": float(chi.statistic), "p_value": float(chi.pvalue), "bins": observed.tolist(),
           "passed": bool(chi.pvalue >= LEVEL)}
    passed = all(r["passed"] for r in rows) and pit["passed"]
    return DiagReport("spine_selection", passed, rows, {"rho": rho, "x": x, "t": t, "n": n, "pit": pit})


def bridge_prefactor(z, x: float, t: float, rho: float):
    """``e^{rho (x - z)} e^{-(x - z)^2 / 2t} (1 - e^{-2xz/t}) / sqrt(2 pi t)``."""
    z = np.asarray(z, dtype=float)
    return (np.exp(rho * (x - z) - (x - z) ** 2 / (2.0 * t)) * -np.expm1(-2.0 * x * z / t)
            / math.sqrt(2.0 * math.pi * t))


@lru_cache(maxsize=None)
def _laguerre(m: int):
    return special.roots_laguerre(m)


def bridge_nodes(x: float, t: float, rho: float, m: int = 24):
    """Nodes ``z_i`` and weights ``c_i`` with ``int f(z) prefactor(z) dz ~ sum c_i f(z_i)``.

    Gauss-Laguerre against ``e^{-rho z}``; the remaining smooth part of the
    prefactor is folded into the weights.
    """
    y, w = _laguerre(m)
    z = y / rho
    c = w / rho * np.exp(y) * bridge_prefactor(z, x, t, rho)
    return z, c


def verify_bridge_representation(params: SimParams, x: float, t: float, n: int = 100_000, n_node: int = 10_000,
                   stream: RandomStream | None = None, m: int = 24, skip_below: float = 1e-12) -> DiagReport:
    """Both sides of the bridge representation at time ``t`` from one particle at ``x``.

    Left: ``e^{-t (1 - rho^2/2)} E_x F(X_t)`` by forward simulation. Right: the
    ``z`` integral of the bridge construction, estimated node by node with
    ``n_node`` replicas each. Functionals: ``1{alive at t}`` and ``min(N, 10)``.
    Nodes whose weight is below ``skip_below`` times the largest are not
    simulated (their contribution is at most ten times the weight).
    """
    rho = params.rho
    if not rho > math.sqrt(2.0):
        raise ValueError("need rho > sqrt(2)")
    if not (x > 0 and t > 0):
        raise ValueError("need x > 0 and t > 0")
    stream = stream or RandomStream(0)
    absorbed = SimParams(rho=rho, max_population=params.max_population)
    scale = math.exp(-t * (1.0 - rho * rho / 2.0))

    fwd = simulate_batch(absorbed, stream.child(0), np.arange(n + 1), np.full(n, float(x)), stop=float(t))
    if fwd.censored.any():
        raise OverflowError("population cap reached")
    nf = fwd.final_counts
    lhs = {"alive": mean_estimate(scale * (nf > 0)), "N_min_10": mean_estimate(scale * np.minimum(nf, 10))}

    z, c = bridge_nodes(x, t, rho, m)
    active = c >= skip_below * c.max()
    means = {"alive": np.zeros(m), "N_min_10": np.zeros(m)}
    ses = {"alive": np.zeros(m), "N_min_10": np.zeros(m)}
    for i in np.flatnonzero(active):
        g = stream.child(1).child(int(i))
        off, taus, hs = K.bridge_spine_births(g.gen, float(z[i]), float(x), float(t), n_node, 2.0)
        res = simulate_batch(absorbed, g.child(0), off, hs, stop=taus, abort_above=float(z[i]))
        acc = (res.status == K.CENSOR_NONE).astype(float)
        if res.censored.any():
            raise OverflowError("population cap reached")
        vals = {"alive": acc, "N_min_10": acc * np.minimum(res.final_counts + 1, 10)}
        for k, v in vals.items():
            e = mean_estimate(v)
            means[k][i], ses[k][i] = e.estimate, e.stderr
    rows = []
    for k in lhs:
        est = float(np.dot(c, means[k]))
        se = float(math.sqrt(np.dot(c * c, ses[k] ** 2)))
        rows.append(_row(k, lhs[k], EstimateWithCI(est, se, n_node * int(active.sum()), est - 1.96 * se,
                                                    est + 1.96 * se)))
    contrib = c * means["alive"]
    big = contrib >= 0.01 * contrib.sum() if contrib.sum() > 0 else np.zeros(m, dtype=bool)
    ci = contrib[big]
    coarse = bool(ci.size > 1 and np.any(np.abs(np.diff(ci)) > 0.5 * np.maximum(ci[:-1], ci[1:])))
    details = {"rho": rho, "x": x, "t": t, "n": n, "n_node": n_node, "nodes": z.tolist(), "weights": c.tolist(),
               "node_alive": means["alive"].tolist(), "coarse_grid": coarse, "skipped": int((~active).sum())}
    return DiagReport("bridge_representation", all(r["passed"] for r in rows), rows, details)
