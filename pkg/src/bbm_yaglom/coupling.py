"""Three processes read off one driftless branching driver.

The driver ``X*`` is a branching Brownian motion without drift. Reading it
through the absorbing lines ``rho s``, ``sqrt2 s`` and ``delta + sqrt2 s``
gives the process with drift ``-rho``, the comparison process with drift
``-sqrt2``, and the shifted comparison process started from ``nu - delta``.
Kill decisions for the three lines are sampled one after the other from the
highest line down. A path that misses the highest line cannot touch a lower
one, and once the highest line is hit the bridge is restarted from the
hitting point. This keeps every kill exact and the three processes pathwise
ordered.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .analytic import SQRT2
from .configs import PointConfiguration, dominates
from .engine import SimParams
from .rng import RandomStream

__all__ = ["Labelled", "CoupledSnapshot", "CoupledTriple", "DominationReport", "run_coupled", "run_coupled_batch", "check_domination_trace"]

PROCESSES = ("X", "XU", "XLD")


@dataclass
class Labelled:
    """Particle positions tagged with lineage ids shared across the three processes."""

    ids: np.ndarray
    pos: np.ndarray

    @property
    def config(self) -> PointConfiguration:
        return PointConfiguration(self.pos[self.pos > 0])

    def add(self, lineage: int, x: float) -> "Labelled":
        return Labelled(np.append(self.ids, lineage), np.append(self.pos, x))


@dataclass
class CoupledSnapshot:
    time: float
    X: Labelled
    XU: Labelled
    XLD: Labelled


@dataclass
class CoupledTriple:
    driver_seed: tuple
    delta: float
    eps: float
    horizon: float
    snapshots: list
    # last death time per process, or None if still alive at the horizon
    extinction: tuple
    censored: bool = False

    @property
    def window(self) -> float:
        return self.delta / self.eps if self.eps > 0 else math.inf


@dataclass
class DominationReport:
    passed: bool
    checks: int = 0
    failures: list = field(default_factory=list)

    def first(self):
        return self.failures[0] if self.failures else None

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "checks": self.checks, "failures": self.failures[:20]})

    def merge(self, other: "DominationReport") -> "DominationReport":
        return DominationReport(self.passed and other.passed, self.checks + other.checks, self.failures + other.failures)


def _run(params, delta, horizon, snaps, stream, offsets, x):
    return K.coupled_kernel(
        stream.gen, np.ascontiguousarray(offsets, dtype=np.int64), np.ascontiguousarray(x, dtype=float),
        float(params.rho), float(delta), float(horizon), snaps, int(params.max_population),
    )


def _triples(out, params, delta, horizon, snaps, stream, offsets, x) -> list:
    zeta, alive, status, s_rep, s_idx, s_lin, s_mask, s_pos = out
    rho = params.rho
    eps = rho - SQRT2
    shifts = (rho, SQRT2, SQRT2)
    n_rep = offsets.size - 1
    order = np.lexsort((s_lin, s_idx, s_rep))
    s_rep, s_idx, s_lin, s_mask, s_pos = s_rep[order], s_idx[order], s_lin[order], s_mask[order], s_pos[order]
    cuts = np.searchsorted(s_rep, np.arange(n_rep + 1))
    result = []
    for r in range(n_rep):
        init = x[offsets[r] : offsets[r + 1]]
        init_ids = np.arange(init.size)
        snapshots = []
        if snaps.size and snaps[0] == 0.0:
            hi = init > delta
            snapshots.append(CoupledSnapshot(0.0, Labelled(init_ids, init.copy()), Labelled(init_ids, init.copy()),
                                             Labelled(init_ids[hi], init[hi] - delta)))
        lo, hi_ = cuts[r], cuts[r + 1]
        for k, s in enumerate(snaps):
            if s == 0.0:
                continue
            sel = s_idx[lo:hi_] == k
            lin, mask, pos = s_lin[lo:hi_][sel], s_mask[lo:hi_][sel], s_pos[lo:hi_][sel]
            parts = []
            for j in range(3):
                m = ((mask >> j) & 1).astype(bool)
                p = pos[m] - shifts[j] * s - (delta if j == 2 else 0.0)
                parts.append(Labelled(lin[m], p))
            snapshots.append(CoupledSnapshot(float(s), *parts))
        ext = []
        for j in range(3):
            ext.append(None if alive[r, j] > 0 else float(zeta[r, j]))
        result.append(CoupledTriple(
            (stream.root_seed, stream.stream_id, stream.path, r), float(delta), float(eps), float(horizon),
            snapshots, tuple(ext), bool(status[r] != K.CENSOR_NONE),
        ))
    return result


def run_coupled_batch(
    params: SimParams, inits: Sequence[PointConfiguration], delta: float, snapshot_times: Sequence[float],
    stream: RandomStream, horizon: float,
) -> list:
    if not params.rho > SQRT2:
        raise ValueError("the coupling needs rho > sqrt(2)")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not horizon > 0 or not math.isfinite(horizon):
        raise ValueError("horizon must be finite and positive")
    snaps = np.asarray(sorted(float(s) for s in snapshot_times), dtype=float)
    if snaps.size and (snaps[0] < 0 or snaps[-1] > horizon or np.any(np.diff(snaps) <= 0)):
        raise ValueError("snapshot times must be distinct and inside [0, horizon]")
    sizes = [len(c) for c in inits]
    if min(sizes, default=1) == 0:
        raise ValueError("initial configurations must be non-empty")
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    x = np.concatenate([c.positions for c in inits]) if inits else np.empty(0)
    out = _run(params, delta, horizon, snaps, stream, offsets, x)
    return _triples(out, params, delta, horizon, snaps, stream, offsets, x)


def run_coupled(
    params: SimParams, init: PointConfiguration, delta: float, snapshot_times: Sequence[float],
    stream: RandomStream, horizon: float = 6.0,
) -> CoupledTriple:
    return run_coupled_batch(params, [init], delta, snapshot_times, stream, horizon)[0]


def _tail_violation(upper: PointConfiguration, lower: PointConfiguration):
    """A level ``y`` with ``lower([y, inf)) > upper([y, inf))``, or None."""
    if dominates(upper, lower):
        return None
    for y in lower.positions[::-1]:
        if lower.tail_count(y) > upper.tail_count(y):
            return float(y)
    return float(lower.positions[0])


def check_domination_trace(triple: CoupledTriple, tol: float = 1e-9) -> DominationReport:
    """Check the upper and lower orderings, lineage links and extinction ordering.

    ``tol`` only applies to the floating-point comparison of positions that
    are linked by lineage (they differ by ``eps * s`` up to rounding).
    """
    rep = DominationReport(True)

    def fail(kind, time, level=None, detail=""):
        rep.passed = False
        rep.failures.append({"kind": kind, "time": time, "level": level, "detail": detail, "driver": list(map(str, triple.driver_seed))})

    for snap in triple.snapshots:
        s = snap.time
        cx, cu, cl = snap.X.config, snap.XU.config, snap.XLD.config
        rep.checks += 1
        y = _tail_violation(cu, cx)
        if y is not None:
            fail("upper", s, y)
        ids_u = dict(zip(snap.XU.ids.tolist(), snap.XU.pos.tolist()))
        for i, p in zip(snap.X.ids.tolist(), snap.X.pos.tolist()):
            if i not in ids_u:
                fail("lineage_upper", s, p, f"id {i} alive in X but not in XU")
                break
            if abs(ids_u[i] - (p + triple.eps * s)) > tol * (1 + abs(p)):
                fail("lineage_upper", s, p, f"id {i} offset {ids_u[i] - p} != {triple.eps * s}")
                break
        if s <= triple.window:
            rep.checks += 1
            y = _tail_violation(cx, cl)
            if y is not None:
                fail("lower", s, y)
            ids_x = set(snap.X.ids.tolist())
            for i, p in zip(snap.XLD.ids.tolist(), snap.XLD.pos.tolist()):
                if i not in ids_x:
                    fail("lineage_lower", s, p, f"id {i} alive in XLD but not in X")
                    break
    if not triple.censored:
        rep.checks += 1
        inf = math.inf
        z, zu, zl = (inf if v is None else v for v in triple.extinction)
        if not z <= zu:
            fail("extinction_upper", min(z, zu), None, f"zeta={z} zetaU={zu}")
        if not min(triple.window, zl) <= z:
            fail("extinction_lower", z, None, f"zeta={z} zetaL={zl} window={triple.window}")
    return rep
