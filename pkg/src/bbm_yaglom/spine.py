"""Backward spine construction of the Yaglom limit and its constants.

A configuration is built backward from a spine at ``z``. The spine is a
Bessel(3) process, and births along it arrive at rate 2. The birth at time
``tau`` starts an absorbed branching Brownian motion at the spine height,
which runs for time ``tau``; the survivors are collected at time 0. The
configuration is accepted when no collected particle lies strictly above
``z``.

Three approximations keep the infinite cascade finite. Together they are
bounded by the truncation budget:

* the spine is followed only to an adaptive horizon, beyond which the
  expected number of births that leave any survivor is below ``budget / 4``;
* births whose own expected survivor count is tiny are pruned greedily
  while the pruned total stays below ``budget / 4``;
* inside the descendant trees, particles whose expected survivor count is
  below ``particle_cut`` are dropped, within a further ``budget / 2``.

A dropped piece can change the configuration only by leaving out
survivors. The chance of that is at most its expected survivor count, so
the total variation error of a proposal is at most its ``residual``.
The last item matters for speed: a tall birth that is unlikely to leave
survivors still grows a tree of millions of particles, almost all of them
in a bulk that is already doomed.

Heights are sampled exactly at the birth times (norm of a 3-d Brownian
motion), so no spine grid is involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from . import _kernels as K
from .analytic import SQRT2
from .configs import PointConfiguration
from .engine import SimParams, simulate_batch
from .estimates import EstimateWithCI, proportion_estimate
from .rng import BesselPath, RandomStream, sample_gamma2

__all__ = [
    "SpineControl",
    "SpineRealization",
    "YaglomSample",
    "YaglomBatch",
    "ProposalBatch",
    "HorizonError",
    "AttemptCapError",
    "birth_log_mass",
    "run_proposals",
    "sample_check_config",
    "estimate_C_rho",
    "estimate_K_rho",
    "gamma_proposals",
    "sample_yaglom",
    "sample_yaglom_batch",
]


class HorizonError(RuntimeError):
    """The truncation budget could not be met before the horizon cap."""


class AttemptCapError(RuntimeError):
    """No proposal was accepted within the attempt cap."""


@dataclass(frozen=True)
class SpineControl:
    """Truncation and safety settings for the backward construction.

    ``max_particles`` caps the particles created per proposal; a proposal
    that hits it is rejected, which can only lower the acceptance rate.
    ``particle_cut`` is the expected-survivor threshold for dropping a
    particle inside a descendant tree.
    """

    budget: float = 1e-4
    t_first: float = 1.0
    growth: float = 1.25
    t_cap: float = 1e6
    max_particles: int = 2_000_000
    particle_cut: float = 1e-10
    max_attempts: int = 1_000_000
    chunk: int = 1000

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if not (self.t_first > 0 and self.growth > 1 and self.t_cap >= self.t_first):
            raise ValueError("invalid horizon schedule")


@lru_cache(maxsize=None)
def _quadrature():
    g, w = special.roots_genlaguerre(16, 0.5)
    nodes = np.sqrt(2.0 * g)
    weights = w / special.gamma(1.5)
    u_grid = np.geomspace(1e-9, 1e8, 160)
    return nodes, weights, u_grid


# the quadrature of the tail bound is trusted to within this factor
_TAIL_SAFETY = 2.0


def birth_log_mass(x, tau, rho):
    """Log of ``e^tau P_x(drift -rho Brownian motion stays positive on [0, tau])``.

    This bounds the expected number of survivors of a birth at height ``x``
    that runs for time ``tau``. Falls back to a closed-form upper bound
    where the exact difference loses precision.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    st = np.sqrt(tau)
    la = special.log_ndtr((x - rho * tau) / st)
    lb = 2.0 * rho * x + special.log_ndtr((-x - rho * tau) / st)
    d = lb - la
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = la + np.log(-np.expm1(np.minimum(d, -1e-300)))
        crude = (np.log(2.0 * x / (rho * rho * math.sqrt(2 * math.pi))) - 1.5 * np.log(tau)
                 + rho * x - rho * rho * tau / 2.0)
    reliable = d < -1e-6
    logp = np.where(reliable, np.minimum(exact, crude), crude)
    logp = np.minimum(logp, 0.0)
    return tau + logp


def _births(stream, zs, rho, ctl):
    nodes, weights, u_grid = _quadrature()
    return K.spine_births(
        stream.gen, zs, float(rho), 2.0, ctl.t_first, ctl.growth, ctl.t_cap, nodes, weights, u_grid,
        ctl.budget / 4.0 / _TAIL_SAFETY,
    )


@dataclass
class ProposalBatch:
    """Outcome of ``n`` proposals built in one compiled pass."""

    z: np.ndarray
    accepted: np.ndarray
    censored: np.ndarray
    horizon_failed: np.ndarray
    horizon: np.ndarray
    residual: np.ndarray
    n_births: np.ndarray
    n_retained: np.ndarray
    final_rep: np.ndarray
    final_pos: np.ndarray

    @property
    def n(self) -> int:
        return int(self.z.size)

    def configuration(self, i: int) -> PointConfiguration:
        lo, hi = np.searchsorted(self.final_rep, [i, i + 1])
        return PointConfiguration(np.append(self.final_pos[lo:hi], self.z[i]))

    def counts(self) -> np.ndarray:
        """Particle count of each proposal including the spine particle."""
        return np.bincount(self.final_rep, minlength=self.n) + 1


def _prune(offsets, taus, hs, rho, budget):
    """Drop the smallest-mass births of each proposal while their total fits in ``budget``.

    Births of a proposal are contiguous in the flat arrays. Cumulative sums
    are taken per proposal: a running sum across proposals would cancel
    catastrophically once some masses are huge.
    """
    n = offsets.size - 1
    owner = np.repeat(np.arange(n), np.diff(offsets))
    mass = np.exp(np.minimum(birth_log_mass(hs, taus, rho), 700.0))
    pruned = np.zeros(mass.size, dtype=bool)
    pruned_mass = np.zeros(n)
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        if hi == lo:
            continue
        order = np.argsort(mass[lo:hi], kind="stable")
        cs = np.cumsum(mass[lo:hi][order])
        k = int(np.searchsorted(cs, budget, side="right"))
        pruned[lo + order[:k]] = True
        pruned_mass[i] = cs[k - 1] if k else 0.0
    return owner, ~pruned, pruned_mass


def run_proposals(
    zs, rho: float, stream: RandomStream, ctl: SpineControl = SpineControl(), stop_above: bool = True
) -> ProposalBatch:
    """Build the backward configuration for each spine endpoint in ``zs``.

    With ``stop_above`` a proposal is abandoned as soon as a survivor above
    its ``z`` appears, which is all acceptance needs.
    """
    if not rho > SQRT2:
        raise ValueError("the backward construction needs rho > sqrt(2)")
    zs = np.ascontiguousarray(zs, dtype=float)
    if np.any(zs <= 0):
        raise ValueError("z must be positive")
    offsets, taus, hs, horizon, tail, failed = _births(stream, zs, rho, ctl)
    owner, keep, pruned_mass = _prune(offsets, taus, hs, rho, ctl.budget / 4.0)
    # retained births, cheapest (earliest) first within each proposal
    idx = np.flatnonzero(keep)
    idx = idx[np.lexsort((taus[idx], owner[idx]))]
    n = zs.size
    sub_off = np.concatenate([[0], np.cumsum(np.bincount(owner[idx], minlength=n))]).astype(np.int64)
    params = SimParams(rho=rho, max_population=ctl.max_particles)
    res = simulate_batch(
        params, stream, sub_off, hs[idx], stop=taus[idx], start=0.0,
        abort_above=zs if stop_above else np.inf, prune_below=ctl.particle_cut, prune_budget=ctl.budget / 2.0,
    )
    censored = res.censored
    accepted = (res.status == K.CENSOR_NONE) & ~failed
    if not stop_above:
        over = np.zeros(n, dtype=bool)
        np.logical_or.at(over, res.final_rep, res.final_pos > zs[res.final_rep])
        accepted &= ~over
    return ProposalBatch(
        zs, accepted, censored, failed, horizon, tail * _TAIL_SAFETY + pruned_mass + res.pruned_mass,
        np.diff(offsets), np.diff(sub_off), res.final_rep, res.final_pos,
    )


@dataclass
class SpineRealization:
    z: float
    spine: BesselPath
    birth_times: np.ndarray
    retained: np.ndarray
    descendants: list
    truncation_horizon: float
    residual_bound: float

    @property
    def configuration(self) -> PointConfiguration:
        parts = [d.positions for d in self.descendants]
        return PointConfiguration(np.concatenate(parts + [np.array([self.z])]))

    @property
    def accepted(self) -> bool:
        return bool(self.configuration.positions[-1] <= self.z)


def sample_check_config(z: float, params: SimParams, budget: float, stream: RandomStream,
                        ctl: SpineControl | None = None) -> SpineRealization:
    """One full realization of the backward configuration from ``z``."""
    if not z > 0:
        raise ValueError("z must be positive")
    if not params.rho > SQRT2:
        raise ValueError("the backward construction needs rho > sqrt(2)")
    ctl = SpineControl(budget=budget) if ctl is None else ctl
    offsets, taus, hs, horizon, tail, failed = _births(stream, np.array([float(z)]), params.rho, ctl)
    if failed[0]:
        raise HorizonError(f"truncation budget {ctl.budget} not met before t={ctl.t_cap}")
    owner, keep, pruned_mass = _prune(offsets, taus, hs, params.rho, ctl.budget / 4.0)
    idx = np.flatnonzero(keep)
    sim = SimParams(rho=params.rho, max_population=ctl.max_particles)
    # one replica per birth; the in-tree budget is shared evenly
    share = ctl.budget / 2.0 / max(idx.size, 1)
    res = simulate_batch(sim, stream, np.arange(idx.size + 1), hs[idx], stop=taus[idx],
                         prune_below=ctl.particle_cut, prune_budget=share)
    if np.any(res.censored):
        raise OverflowError("population cap reached inside a birth")
    desc = res.finals()
    times = np.concatenate([[0.0], taus])
    vals = np.concatenate([[z], hs])
    return SpineRealization(
        float(z), BesselPath(float(z), times, vals), taus, keep, desc, float(horizon[0]),
        float(tail[0] * _TAIL_SAFETY + pruned_mass[0] + res.pruned_mass.sum()),
    )


def _check_rho(params: SimParams):
    if not params.rho > SQRT2:
        raise ValueError("the backward construction needs rho > sqrt(2)")


def _fan(fn, n, seed, chunk, threads, stream_offset=0):
    from .parallel import map_chunks

    return map_chunks(fn, n, seed, chunk=chunk, threads=threads, stream_offset=stream_offset)


def estimate_C_rho(z: float, n: int, params: SimParams, seed: int, ctl: SpineControl = SpineControl(),
                   threads: int = 1) -> EstimateWithCI:
    """Frequency of acceptance for spine endpoint ``z``, with a Wilson interval."""
    if n < 1:
        raise ValueError("need at least one replica")
    if not z > 0:
        raise ValueError("z must be positive")
    _check_rho(params)

    def job(stream, start, size):
        return int(run_proposals(np.full(size, float(z)), params.rho, stream, ctl).accepted.sum())

    k = sum(_fan(job, n, seed, ctl.chunk, threads))
    return proportion_estimate(k, n, {"z": z, "rho": params.rho, "budget": ctl.budget})


def _gamma_proposals(stream: RandomStream, rho: float, size: int, ctl: SpineControl) -> ProposalBatch:
    zs = sample_gamma2(stream.child(0), rho, size)
    return run_proposals(zs, rho, stream.child(1), ctl)


def gamma_proposals(params: SimParams, n: int, seed: int, ctl: SpineControl = SpineControl(),
                    threads: int = 1, stream_offset: int = 0) -> list:
    """``n`` Gamma(2, rho) proposals as a list of per-chunk ``ProposalBatch``.

    Chunk ``c`` uses stream ``(seed, stream_offset + c)``, the same streams
    ``sample_yaglom_batch`` consumes.
    """
    if n < 1:
        raise ValueError("need at least one replica")
    _check_rho(params)

    def job(stream, start, size):
        return _gamma_proposals(stream, params.rho, size, ctl)

    return _fan(job, n, seed, ctl.chunk, threads, stream_offset)


def estimate_K_rho(params: SimParams, n: int, seed: int, ctl: SpineControl = SpineControl(),
                   threads: int = 1) -> EstimateWithCI:
    """``(2 / rho^2)`` times the acceptance rate under Gamma(2, rho) proposals."""
    k = sum(int(b.accepted.sum()) for b in gamma_proposals(params, n, seed, ctl, threads))
    est = proportion_estimate(k, n, {"rho": params.rho, "budget": ctl.budget, "accepted": k})
    return est.scaled(2.0 / params.rho**2)


@dataclass
class YaglomSample:
    """An accepted draw; ``attempts`` counts the rejections before it."""

    configuration: PointConfiguration
    z_used: float
    attempts: int


@dataclass
class YaglomBatch:
    """Accepted samples in proposal order plus the proposal counters."""

    samples: list
    proposals: int
    accepted: int
    censored: int
    horizon_failures: int
    max_residual: float
    params: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals

    def K_estimate(self) -> EstimateWithCI:
        rho = self.params["rho"]
        return proportion_estimate(self.accepted, self.proposals, dict(self.params)).scaled(2.0 / rho**2)


def sample_yaglom_batch(params: SimParams, n: int, seed: int, ctl: SpineControl = SpineControl(),
                        threads: int = 1, stream_offset: int = 0,
                        max_proposals: int | None = None) -> YaglomBatch:
    """``n`` accepted draws using Gamma(2, rho) proposals and rejection.

    Proposals are generated in fixed-size chunks with one stream per chunk
    and consumed in chunk order, so the result does not depend on
    ``threads``. With ``max_proposals`` set, sampling stops after that many
    proposals and the batch may hold fewer than ``n`` samples.
    """
    _check_rho(params)
    if n < 1:
        raise ValueError("need at least one sample")
    if max_proposals is not None and max_proposals < 1:
        raise ValueError("max_proposals must be positive")
    from concurrent.futures import ThreadPoolExecutor

    samples: list = []
    proposals = censored = failures = 0
    max_res = 0.0
    since = 0
    next_chunk = 0
    wave = max(1, threads)
    pool = ThreadPoolExecutor(max_workers=wave) if wave > 1 else None

    def job(c):
        return _gamma_proposals(RandomStream(seed, stream_offset + c), params.rho, ctl.chunk, ctl)

    try:
        while len(samples) < n and proposals != max_proposals:
            ids = list(range(next_chunk, next_chunk + wave))
            next_chunk += wave
            batches = list(pool.map(job, ids)) if pool else [job(c) for c in ids]
            for b in batches:
                for i in range(b.n):
                    proposals += 1
                    since += 1
                    censored += int(b.censored[i])
                    failures += int(b.horizon_failed[i])
                    max_res = max(max_res, float(b.residual[i]))
                    if b.accepted[i]:
                        samples.append(YaglomSample(b.configuration(i), float(b.z[i]), since - 1))
                        since = 0
                        if len(samples) == n:
                            break
                    if proposals == max_proposals:
                        break
                    if since >= ctl.max_attempts:
                        raise AttemptCapError(f"no acceptance in {ctl.max_attempts} proposals")
                if len(samples) == n or proposals == max_proposals:
                    break
    finally:
        if pool:
            pool.shutdown()
    return YaglomBatch(samples, proposals, len(samples), censored, failures, max_res,
                       {"rho": params.rho, "budget": ctl.budget, "seed": seed})


def sample_yaglom(params: SimParams, stream: RandomStream, ctl: SpineControl = SpineControl()) -> YaglomSample:
    """A single accepted draw (proposals made in small batches from ``stream``)."""
    _check_rho(params)
    attempts = 0
    k = 0
    while attempts < ctl.max_attempts:
        size = min(64, ctl.max_attempts - attempts)
        b = _gamma_proposals(stream.child(k), params.rho, size, ctl)
        k += 1
        hit = np.flatnonzero(b.accepted)
        if hit.size:
            i = int(hit[0])
            return YaglomSample(b.configuration(i), float(b.z[i]), attempts + i)
        attempts += size
    raise AttemptCapError(f"no acceptance in {ctl.max_attempts} proposals")
