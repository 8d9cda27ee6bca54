"""Random streams and the exact stochastic primitives used by the simulators.

Every stream is a Philox (counter-based) generator keyed by
``(root_seed, stream_id)`` so that replicas can be farmed out to any number of
workers and still reproduce bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RandomStream",
    "BesselPath",
    "bridge_survival_prob",
    "bridge_hit_time",
    "sample_bessel3",
    "sample_bessel3_at",
    "sample_bessel_bridge_at",
    "sample_poisson_times",
    "sample_gamma2",
]

_MASK64 = (1 << 64) - 1


def _entropy(root_seed: int, stream_id: int, path: tuple) -> np.ndarray:
    """Injective key for SeedSequence.

    SeedSequence zero-pads short keys and splits large integers into a
    variable number of words, so ``[s, i]`` and ``[s, i, 0]`` would collide.
    A length prefix and two words per value avoid that.
    """
    vals = [root_seed, stream_id, *(int(k) & _MASK64 for k in path)]
    words = [len(path)]
    for v in vals:
        words += [v & 0xFFFFFFFF, v >> 32]
    return np.array(words, dtype=np.uint32)


@dataclass
class RandomStream:
    """A reproducible random stream identified by ``(root_seed, stream_id)``.

    Streams are cheap value objects. Do not share one stream between threads;
    derive children with :meth:`child` instead.
    """

    root_seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.root_seed) < 0 or int(self.stream_id) < 0:
            raise ValueError("root_seed and stream_id must be non-negative")
        self.root_seed = int(self.root_seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(_entropy(self.root_seed, self.stream_id, self.path))
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def child(self, k: int) -> "RandomStream":
        """Independent sub-stream number ``k`` of this stream."""
        return RandomStream(self.root_seed, self.stream_id, self.path + (int(k),))

    # thin pass-throughs, so call sites read like numpy
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.gen.standard_normal(size)

    def exponential(self, scale=1.0, size=None):
        return self.gen.exponential(scale, size)

    def random(self, size=None):
        return self.gen.random(size)

    def wald(self, mean, scale, size=None):
        return self.gen.wald(mean, scale, size)

    def poisson(self, lam, size=None):
        return self.gen.poisson(lam, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)


@dataclass(frozen=True)
class BesselPath:
    start: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same shape")
        if self.times.size and self.times[0] != 0.0:
            raise ValueError("times must start at 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def at(self, t):
        """Linear interpolation of the path at time(s) ``t``."""
        return np.interp(t, self.times, self.values)


def _check_finite_nonneg(name, v):
    a = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError(f"{name} must be finite and non-negative")
    return a


def bridge_survival_prob(x, z, t):
    """Probability that a Brownian bridge from ``x`` to ``z`` over time ``t``
    stays strictly positive: ``1 - exp(-2 x z / t)``.

    Works elementwise on arrays. The bridge law does not depend on the drift
    of the underlying Brownian motion, so this is exact for any drift.
    """
    x = _check_finite_nonneg("x", x)
    z = _check_finite_nonneg("z", z)
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("t must be finite and positive")
    out = -np.expm1(-2.0 * x * z / t)
    return float(out) if out.ndim == 0 else out


def bridge_hit_time(a, b, dt, stream: RandomStream):
    """First time a Brownian bridge hits 0, given that it does.

    The bridge runs over ``[0, dt]`` from ``a > 0`` to ``b``. If ``b > 0`` the
    bridge is conditioned on touching 0, which by reflection has the same
    hitting time as the bridge ending at ``-b``. Writing the bridge through
    the time change ``u = s dt / (dt - s)`` turns it into a Brownian motion
    with constant drift ``-|b|/dt`` started at ``a``, whose hitting time of 0
    is inverse Gaussian with mean ``a dt / |b|`` and shape ``a**2``.
    """
    a = np.asarray(a, dtype=float)
    b = np.abs(np.asarray(b, dtype=float))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), a.shape)
    if a.size == 0:
        return np.empty(0)
    a_pos = np.maximum(a, 1e-300)
    levy = b <= 1e-12 * a_pos
    mean = np.where(levy, 1.0, a_pos * dt / np.where(levy, 1.0, b))
    u = stream.wald(mean, a_pos * a_pos)
    # without drift the hitting time is Levy: a^2 / N^2
    u = np.where(levy, a_pos * a_pos / stream.standard_normal(a.shape) ** 2, u)
    s = u * dt / (dt + u)
    # degenerate starts on the barrier hit immediately
    return np.where(a <= 0, 0.0, np.minimum(s, dt))


def sample_bessel3(stream: RandomStream, z: float, horizon: float, dt: float) -> BesselPath:
    """Three-dimensional Bessel process from ``z`` on a regular ``dt`` grid.

    Simulated as the norm of a 3-d Brownian motion started at ``(z, 0, 0)``,
    which is exact at the grid points.
    """
    if not (z > 0 and dt > 0 and horizon >= dt):
        raise ValueError("need z > 0, dt > 0 and horizon >= dt")
    n = int(np.floor(horizon / dt + 1e-9))
    times = np.arange(n + 1) * dt
    if times[-1] < horizon - 1e-12:
        times = np.append(times, horizon)
    return BesselPath(z, times, sample_bessel3_at(stream, z, times))


def sample_bessel3_at(stream: RandomStream, z, times) -> np.ndarray:
    """Bessel(3) values at sorted ``times`` (which must start at 0)."""
    times = np.asarray(times, dtype=float)
    gaps = np.diff(times)
    incr = stream.standard_normal((gaps.size, 3)) * np.sqrt(gaps)[:, None]
    pos = np.vstack([[z, 0.0, 0.0], incr]).cumsum(axis=0)
    return np.sqrt((pos * pos).sum(axis=1))


def _vmf3_axis(stream: RandomStream, kappa: np.ndarray) -> np.ndarray:
    """Unit vectors from a von Mises-Fisher law on S^2 around the x-axis."""
    kappa = np.asarray(kappa, dtype=float)
    u = stream.random(kappa.shape)
    k = np.maximum(kappa, 1e-12)
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * k)) / k
    w = np.where(kappa < 1e-12, 2.0 * u - 1.0, np.clip(w, -1.0, 1.0))
    phi = 2.0 * np.pi * stream.random(kappa.shape)
    r = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    return np.stack([w, r * np.cos(phi), r * np.sin(phi)], axis=-1)


def sample_bessel_bridge_at(stream: RandomStream, z: float, x: float, length: float, times) -> np.ndarray:
    """Bessel(3) bridge from ``z`` (time 0) to ``x`` (time ``length``).

    The bridge is the norm of a 3-d Brownian bridge from ``(z, 0, 0)`` to an
    endpoint of norm ``x`` whose direction is von Mises-Fisher with
    concentration ``z x / length``. ``times`` must be sorted and lie in
    ``[0, length]``.
    """
    times = np.asarray(times, dtype=float)
    end = x * _vmf3_axis(stream, np.array(z * x / length))
    start = np.array([z, 0.0, 0.0])
    out = np.empty(times.size)
    cur_t, cur = 0.0, start
    for i, s in enumerate(times):
        h = s - cur_t
        rem = length - cur_t
        if h <= 0:
            out[i] = np.linalg.norm(cur)
            continue
        mean = cur + (end - cur) * (h / rem)
        var = h * (rem - h) / rem
        cur = mean + np.sqrt(max(var, 0.0)) * stream.standard_normal(3)
        cur_t = s
        out[i] = np.linalg.norm(cur)
    return out


def sample_poisson_times(stream: RandomStream, rate: float, horizon: float) -> np.ndarray:
    """Atoms of a rate-``rate`` Poisson process on ``[0, horizon]``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return np.empty(0)
    out = []
    t = 0.0
    block = max(8, int(rate * horizon * 1.2) + 8)
    while True:
        gaps = stream.exponential(1.0 / rate, block)
        ts = t + np.cumsum(gaps)
        keep = ts[ts <= horizon]
        out.append(keep)
        if keep.size < block:
            break
        t = ts[-1]
    return np.concatenate(out)


def sample_gamma2(stream: RandomStream, rate: float, size=None):
    """Draw(s) with density ``rate**2 z exp(-rate z)``: a sum of two exponentials."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    shape = (2,) if size is None else (2,) + tuple(np.atleast_1d(size))
    e = stream.exponential(1.0 / rate, shape)
    out = e.sum(axis=0)
    return float(out) if size is None else out
