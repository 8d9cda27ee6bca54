import math

import numpy as np
import pytest

from bbm_yaglom.configs import PointConfiguration
from bbm_yaglom.engine import (
    MovingBoundary, SimParams, simulate_batch, simulate_to_extinction, simulate_truncated, simulate_until,
    snapshots_to_csv,
)
from bbm_yaglom.rng import RandomStream

# P_1(Brownian motion with drift -2 stays positive up to t=1), mpmath
SURV_DRIFT2 = 0.084953318671071062843
# P_0.5(driftless Brownian motion stays positive up to t=2), mpmath
SURV_DRIFT0 = 0.27632639016823693299
N = 40_000


def _batch(params, x, stop, seed=1, n=N, **kw):
    return simulate_batch(params, RandomStream(seed), np.arange(n + 1), np.full(n, x), stop=stop, **kw)


def _within(values, target, k=4.0):
    m = values.mean()
    se = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(m - target) <= k * se, (m, target, se)


@pytest.mark.parametrize("rho,x,t,p", [(2.0, 1.0, 1.0, SURV_DRIFT2), (0.0, 0.5, 2.0, SURV_DRIFT0)])
def test_single_particle_survival(rho, x, t, p):
    res = _batch(SimParams(rho=rho, branching=False), x, t)
    alive = (res.final_counts > 0).astype(float)
    _within(alive, p)


def test_mean_population_without_barrier():
    res = _batch(SimParams(rho=2.0, absorb=False), 1.0, 1.5)
    _within(res.final_counts.astype(float), math.exp(1.5))


def test_many_to_one_with_barrier():
    res = _batch(SimParams(rho=2.0), 1.0, 1.0)
    _within(res.final_counts.astype(float), math.e * SURV_DRIFT2)


def test_batch_is_reproducible():
    p = SimParams(rho=1.8)
    a = _batch(p, 1.0, 2.0, n=500)
    b = _batch(p, 1.0, 2.0, n=500)
    assert np.array_equal(a.final_pos, b.final_pos) and np.array_equal(a.zeta, b.zeta)
    c = _batch(p, 1.0, 2.0, seed=2, n=500)
    assert not np.array_equal(a.final_pos, c.final_pos)


def test_extinction_run_and_census():
    out = simulate_to_extinction(SimParams(rho=2.0), PointConfiguration([1.0, 2.0]), RandomStream(3), [0.0, 0.5])
    assert out.censored is None and out.extinction_time > 0
    assert len(out.final) == 0 and out.census_ok()
    assert out.snapshots[0][1] == PointConfiguration([1.0, 2.0])


def test_finals_are_positive_and_sorted():
    res = _batch(SimParams(rho=1.0), 1.0, 2.0, n=300)
    assert np.all(res.final_pos > 0)
    assert np.all(np.diff(res.final_rep) >= 0)
    for cfg, k in zip(res.finals(), res.final_counts):
        assert len(cfg) == k


def test_snapshot_counts_shape():
    res = _batch(SimParams(rho=2.0), 1.0, 1.0, n=200, snap_times=[0.0, 0.5, 1.0])
    sc = res.snapshot_counts()
    assert sc.shape == (200, 3)
    assert np.all(sc[:, 0] == 1)
    assert np.array_equal(sc[:, 2], res.final_counts)


def test_population_cap_censors():
    res = _batch(SimParams(rho=0.0, absorb=False, max_population=20), 5.0, 10.0, n=50)
    assert res.censored.all()
    out = simulate_to_extinction(SimParams(rho=0.0, max_population=20, max_time=10.0),
                                 PointConfiguration([5.0]), RandomStream(1))
    assert out.censored == "max_population" and out.extinction_time is None


def test_simulate_until():
    p = SimParams(rho=2.0)
    init = PointConfiguration([1.0])
    assert simulate_until(p, init, 0.0, RandomStream(1)) == init
    cfg = simulate_until(p, init, 0.5, RandomStream(1))
    assert cfg == simulate_until(p, init, 0.5, RandomStream(1))
    with pytest.raises(OverflowError):
        simulate_until(SimParams(rho=0.0, max_population=5, absorb=False), PointConfiguration([3.0]), 20.0,
                       RandomStream(1))


def test_moving_boundary_keeps_particles_below_ceiling():
    t = 8.0
    params = SimParams(rho=math.sqrt(2.0), boundary=MovingBoundary(t))
    curve = params.boundary.curve
    s = 3.0
    res = _batch(params, 2.0, s, n=2000)
    ceiling = params.boundary.c * (t - s) ** (1 / 3)
    assert np.all(res.final_pos < ceiling)
    assert res.top_kills.sum() > 0
    out = simulate_truncated(params, PointConfiguration([2.0]), s, RandomStream(2))
    assert out.census_ok()
    assert curve.t == t


def test_moving_boundary_survival_is_below_free_survival():
    t = 8.0
    free = _batch(SimParams(rho=math.sqrt(2.0)), 3.0, 4.0, n=5000)
    cut = _batch(SimParams(rho=math.sqrt(2.0), boundary=MovingBoundary(t)), 3.0, 4.0, n=5000)
    assert cut.final_counts.mean() < free.final_counts.mean()


def test_argument_errors():
    with pytest.raises(ValueError):
        SimParams(rho=-1.0)
    with pytest.raises(ValueError):
        SimParams(branching_rate=2.0)
    with pytest.raises(ValueError):
        MovingBoundary(0.0)
    with pytest.raises(ValueError):
        simulate_to_extinction(SimParams(rho=1.0), PointConfiguration([1.0]), RandomStream(0))
    with pytest.raises(ValueError):
        simulate_to_extinction(SimParams(rho=2.0), PointConfiguration(), RandomStream(0))
    with pytest.raises(ValueError):
        simulate_truncated(SimParams(rho=2.0), PointConfiguration([1.0]), 1.0, RandomStream(0))
    p = SimParams(rho=2.0, boundary=MovingBoundary(1.0))
    with pytest.raises(ValueError):
        simulate_truncated(p, PointConfiguration([5.0]), 0.5, RandomStream(0))
    with pytest.raises(ValueError):
        simulate_batch(SimParams(), RandomStream(0), np.array([0, 1]), np.array([1.0]), stop=1.0, start=2.0)


def test_snapshots_csv():
    text = snapshots_to_csv([(0, 0.5, 1.25)])
    assert text.splitlines() == ["# bbm-yaglom snapshots v1", "replica_id,time,position", "0,0.5,1.25"]
