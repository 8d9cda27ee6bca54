"""Forward simulation of branching Brownian motion with drift and absorption.

Each particle carries an exponential branching clock. Between events its
endpoint is Gaussian, and survival against the barrier at 0 is decided with
the exact Brownian-bridge probability, so there is no time-stepping error at
the flat barrier. With a moving ceiling ``L_t(s) = c (t - s)^(1/3)`` the
bridge is additionally walked in ``crossing_dt`` pieces whenever the ceiling
is within reach, and each piece is tested against the chord of the ceiling.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .analytic import C_CEIL, SQRT2, BoundaryCurve
from .configs import PointConfiguration
from .rng import RandomStream

__all__ = [
    "MovingBoundary",
    "SimParams",
    "SimOutcome",
    "BatchResult",
    "simulate_batch",
    "simulate_to_extinction",
    "simulate_until",
    "simulate_truncated",
    "snapshots_to_csv",
]


@dataclass(frozen=True)
class MovingBoundary:
    """Ceiling ``c (t - s)^(1/3)`` that reaches 0 at time ``t``."""

    t: float
    c: float = C_CEIL

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("moving boundary horizon must be positive")

    @property
    def curve(self) -> BoundaryCurve:
        return BoundaryCurve(self.t, self.c)


@dataclass(frozen=True)
class SimParams:
    """Model and safety parameters for one forward simulation.

    ``absorb`` and ``branching`` exist as test hooks: switching either off
    gives the process without the barrier or a single diffusing particle.
    ``max_population`` caps the number of particles ever created in a replica.
    """

    rho: float = 2.0
    branching_rate: float = 1.0
    boundary: MovingBoundary | None = None
    max_population: int = 10_000_000
    max_time: float = math.inf
    crossing_dt: float = 1e-3
    absorb: bool = True
    branching: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho >= 0):
            raise ValueError("rho must be finite and >= 0")
        if self.branching_rate != 1.0:
            raise ValueError("the branching rate is fixed at 1")
        if not self.max_population >= 1:
            raise ValueError("max_population must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if self.boundary is not None and not self.crossing_dt > 0:
            raise ValueError("crossing_dt must be positive")

    @property
    def subcritical(self) -> bool:
        return self.rho >= SQRT2


@dataclass
class SimOutcome:
    """Result of a single forward run.

    ``extinction_time`` is ``None`` when the run was censored or stopped
    while particles were still alive; ``censored`` then names the reason.
    """

    extinction_time: float | None
    censored: str | None
    final: PointConfiguration
    snapshots: list = field(default_factory=list)
    boundary_kills: int = 0
    absorbed_count: int = 0
    births: int = 0
    initial_count: int = 0

    def census_ok(self) -> bool:
        return self.births - self.absorbed_count - self.boundary_kills == len(self.final) - self.initial_count


@dataclass
class BatchResult:
    """Raw arrays from :func:`simulate_batch` (one entry per replica)."""

    n: int
    zeta: np.ndarray
    status: np.ndarray
    births: np.ndarray
    absorbed: np.ndarray
    top_kills: np.ndarray
    initial: np.ndarray
    final_rep: np.ndarray
    final_pos: np.ndarray
    snap_times: np.ndarray
    snap_rep: np.ndarray
    snap_idx: np.ndarray
    snap_pos: np.ndarray
    pruned: np.ndarray | None = None
    pruned_mass: np.ndarray | None = None

    @property
    def final_counts(self) -> np.ndarray:
        return np.bincount(self.final_rep, minlength=self.n)

    @property
    def extinct(self) -> np.ndarray:
        return (self.status == K.CENSOR_NONE) & (self.final_counts == 0)

    @property
    def censored(self) -> np.ndarray:
        return self.status == K.CENSOR_POPULATION

    @property
    def aborted(self) -> np.ndarray:
        return self.status == K.ABORT_ABOVE

    def final_config(self, r: int) -> PointConfiguration:
        lo, hi = np.searchsorted(self.final_rep, [r, r + 1])
        return PointConfiguration(self.final_pos[lo:hi])

    def finals(self) -> list:
        cuts = np.searchsorted(self.final_rep, np.arange(self.n + 1))
        return [PointConfiguration(self.final_pos[cuts[i] : cuts[i + 1]]) for i in range(self.n)]

    def snapshot_counts(self) -> np.ndarray:
        """``counts[r, k]`` particles of replica ``r`` at snapshot ``k``."""
        out = np.zeros((self.n, self.snap_times.size), dtype=np.int64)
        np.add.at(out, (self.snap_rep, self.snap_idx), 1)
        return out


def _as_offsets(inits: Sequence) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.array([len(c) for c in inits], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    xs = [c.positions if isinstance(c, PointConfiguration) else np.asarray(c, dtype=float) for c in inits]
    x = np.concatenate(xs) if xs else np.empty(0)
    return offsets, x.astype(float)


def simulate_batch(
    params: SimParams,
    stream: RandomStream,
    offsets: np.ndarray,
    init_x: np.ndarray,
    stop: float | np.ndarray = math.inf,
    start: float | np.ndarray = 0.0,
    snap_times: Sequence[float] = (),
    abort_above: float | np.ndarray = math.inf,
    prune_below: float = 0.0,
    prune_budget: float | np.ndarray = 0.0,
) -> BatchResult:
    """Run many independent replicas in one compiled call.

    ``offsets`` delimits the initial particles of each replica. ``start`` and
    ``stop`` may be given per initial particle; descendants inherit the stop
    time of their ancestor. A replica with a survivor above
    ``abort_above[r]`` at its stop time is abandoned early. ``prune_below``
    and ``prune_budget`` switch on dropping of particles that are very
    unlikely to leave survivors (see ``_kernels.bbm_kernel``).
    """
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    init_x = np.ascontiguousarray(init_x, dtype=float)
    n_rep = offsets.size - 1
    n_p = init_x.size
    t0 = np.ascontiguousarray(np.broadcast_to(np.asarray(start, dtype=float), (n_p,)))
    ts = np.ascontiguousarray(np.broadcast_to(np.minimum(np.asarray(stop, dtype=float), params.max_time), (n_p,)))
    if np.any(ts < t0):
        raise ValueError("stop times must not precede start times")
    snaps = np.asarray(sorted(float(s) for s in snap_times), dtype=float)
    if snaps.size and (snaps[0] < 0 or np.any(np.diff(snaps) <= 0)):
        raise ValueError("snapshot times must be distinct and non-negative")
    abort = np.ascontiguousarray(np.broadcast_to(np.asarray(abort_above, dtype=float), (n_rep,)))
    budget = np.ascontiguousarray(np.broadcast_to(np.asarray(prune_budget, dtype=float), (n_rep,)))
    moving = params.boundary is not None
    bt = params.boundary.t if moving else 1.0
    bc = params.boundary.c if moving else C_CEIL
    if moving:
        # everything is dead once the ceiling reaches 0
        ts = np.minimum(ts, bt)
    rate = params.branching_rate if params.branching else 0.0
    out = K.bbm_kernel(
        stream.gen, offsets, init_x, t0, ts, float(params.rho), float(rate), bool(params.absorb),
        snaps, moving, float(bt), float(bc), float(params.crossing_dt), int(params.max_population), abort,
        float(prune_below), budget,
    )
    zeta, status, births, absorbed, top, created, pruned, pmass, f_rep, f_pos, s_rep, s_idx, s_pos = out
    # snapshots at or before a particle's start time are its initial position
    if snaps.size:
        owner = np.repeat(np.arange(n_rep), np.diff(offsets))
        kept = status[owner] == K.CENSOR_NONE
        add_rep, add_idx, add_pos = [], [], []
        for k, s in enumerate(snaps):
            sel = kept & (t0 == s)
            if np.any(sel):
                add_rep.append(owner[sel])
                add_idx.append(np.full(int(sel.sum()), k))
                add_pos.append(init_x[sel])
        if add_rep:
            s_rep = np.concatenate([s_rep] + add_rep)
            s_idx = np.concatenate([s_idx] + add_idx)
            s_pos = np.concatenate([s_pos] + add_pos)
        order = np.lexsort((s_pos, s_idx, s_rep))
        s_rep, s_idx, s_pos = s_rep[order], s_idx[order], s_pos[order]
    order = np.lexsort((f_pos, f_rep))
    return BatchResult(
        n_rep, zeta, status, births, absorbed, top, np.diff(offsets), f_rep[order], f_pos[order],
        snaps, s_rep, s_idx, s_pos, pruned, pmass,
    )


def _outcome(res: BatchResult, r: int = 0, stopped_early: bool = False) -> SimOutcome:
    final = res.final_config(r)
    censored = None
    zeta = float(res.zeta[r])
    if res.status[r] == K.CENSOR_POPULATION:
        censored, zeta = "max_population", None
    elif len(final) > 0:
        censored = None if stopped_early else "max_time"
        zeta = None
    snaps = []
    lo, hi = np.searchsorted(res.snap_rep, [r, r + 1])
    for k, s in enumerate(res.snap_times):
        sel = res.snap_idx[lo:hi] == k
        snaps.append((float(s), PointConfiguration(res.snap_pos[lo:hi][sel])))
    return SimOutcome(
        zeta, censored, final, snaps, int(res.top_kills[r]), int(res.absorbed[r]), int(res.births[r]),
        int(res.initial[r]),
    )


def _check_init(init: PointConfiguration):
    if not isinstance(init, PointConfiguration):
        init = PointConfiguration(init)
    if len(init) == 0:
        raise ValueError("initial configuration must be non-empty")
    return init


def simulate_to_extinction(
    params: SimParams, init: PointConfiguration, stream: RandomStream, snapshot_times: Sequence[float] = ()
) -> SimOutcome:
    """Run until the population dies out (or a cap is hit)."""
    init = _check_init(init)
    if params.rho < SQRT2 and not math.isfinite(params.max_time):
        raise ValueError("supercritical drift needs a finite max_time")
    if any(s > params.max_time for s in snapshot_times):
        raise ValueError("snapshot beyond max_time")
    offsets, x = _as_offsets([init])
    res = simulate_batch(params, stream, offsets, x, stop=params.max_time, snap_times=snapshot_times)
    return _outcome(res, 0)


def simulate_until(params: SimParams, init: PointConfiguration, s: float, stream: RandomStream) -> PointConfiguration:
    """Configuration at time ``s`` (empty if extinct earlier)."""
    if not s >= 0:
        raise ValueError("s must be non-negative")
    init = _check_init(init)
    if s == 0:
        return init
    offsets, x = _as_offsets([init])
    res = simulate_batch(params, stream, offsets, x, stop=s)
    if res.status[0] == K.CENSOR_POPULATION:
        raise OverflowError("population cap reached before time s")
    return res.final_config(0)


def simulate_truncated(
    params: SimParams, init: PointConfiguration, s: float, stream: RandomStream, snapshot_times: Sequence[float] = ()
) -> SimOutcome:
    """Run with both barriers until time ``s`` and report ceiling kills."""
    if params.boundary is None:
        raise ValueError("simulate_truncated needs a moving boundary")
    init = _check_init(init)
    t = params.boundary.t
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if init.positions[-1] >= params.boundary.c * t ** (1.0 / 3.0):
        raise ValueError("initial particle at or above the ceiling")
    offsets, x = _as_offsets([init])
    res = simulate_batch(params, stream, offsets, x, stop=s, snap_times=snapshot_times)
    return _outcome(res, 0, stopped_early=True)


def snapshots_to_csv(rows) -> str:
    """Rows ``(replica_id, time, position)`` as CSV text with a schema line."""
    buf = io.StringIO()
    buf.write("# bbm-yaglom snapshots v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica_id", "time", "position"])
    for rep, t, x in rows:
        w.writerow([int(rep), repr(float(t)), repr(float(x))])
    return buf.getvalue()
