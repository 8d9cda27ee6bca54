import math

import numpy as np
import pytest

from bbm_yaglom.engine import SimParams
from bbm_yaglom.rng import RandomStream
from bbm_yaglom.spine import (
    SpineControl, birth_log_mass, estimate_C_rho, estimate_K_rho, gamma_proposals, run_proposals,
    sample_check_config, sample_yaglom, sample_yaglom_batch,
)

SURV_DRIFT2 = 0.084953318671071062843
CTL = SpineControl(chunk=200)


def test_birth_log_mass_matches_closed_form():
    assert birth_log_mass(1.0, 1.0, 2.0) == pytest.approx(1.0 + math.log(SURV_DRIFT2), rel=1e-12)
    # far in the tail the value is an upper bound of the exact log mass
    x = np.array([0.5, 1.0, 3.0])
    tau = np.array([50.0, 200.0, 1000.0])
    lm = birth_log_mass(x, tau, 2.0)
    assert np.all(np.isfinite(lm))
    assert np.all(lm <= tau)


def test_proposals_accept_only_below_spine():
    b = run_proposals(np.array([0.5, 1.0, 2.0, 3.0] * 50), 2.0, RandomStream(1), CTL)
    assert b.n == 200
    for i in np.flatnonzero(b.accepted):
        cfg = b.configuration(i)
        assert cfg.positions[-1] == b.z[i]
        assert len(cfg) == b.counts()[i]
    assert np.all(b.residual[~b.horizon_failed] <= CTL.budget)
    assert not b.horizon_failed.any()


def test_full_realization():
    r = sample_check_config(1.5, SimParams(rho=2.0), 1e-4, RandomStream(4))
    assert r.residual_bound <= 1e-4
    assert r.spine.values[0] == 1.5 and np.all(np.diff(r.birth_times) > 0)
    cfg = r.configuration
    assert 1.5 in cfg.positions.tolist()
    assert r.accepted == (cfg.positions[-1] <= 1.5)


def test_acceptance_is_positive_at_rho_3():
    est = estimate_C_rho(1.0, 2000, SimParams(rho=3.0), 5, CTL)
    assert est.lower > 0


def test_K_estimate_in_range():
    est = estimate_K_rho(SimParams(rho=2.0), 2000, 6, CTL)
    assert 0 < est.estimate <= 0.5


def test_mean_identity_on_proposals():
    bs = gamma_proposals(SimParams(rho=2.0), 6000, 7, CTL)
    v = np.concatenate([b.counts() * b.accepted for b in bs]).astype(float)
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - 1.0) <= 4 * se


def test_batch_is_thread_independent():
    p = SimParams(rho=2.0)
    a = sample_yaglom_batch(p, 30, 8, CTL, threads=1)
    b = sample_yaglom_batch(p, 30, 8, CTL, threads=3)
    assert a.proposals == b.proposals
    assert [s.configuration for s in a.samples] == [s.configuration for s in b.samples]
    assert all(s.configuration.positions[-1] == s.z_used for s in a.samples)


def test_proposal_budget_stops_early():
    p = SimParams(rho=2.0)
    full = sample_yaglom_batch(p, 10_000, 9, CTL, max_proposals=300)
    assert full.proposals == 300 and full.accepted < 10_000
    with pytest.raises(ValueError):
        sample_yaglom_batch(p, 5, 9, CTL, max_proposals=0)


def test_single_sample():
    s = sample_yaglom(SimParams(rho=2.0), RandomStream(10))
    assert s.configuration.positions[-1] == s.z_used


def test_argument_errors():
    with pytest.raises(ValueError):
        run_proposals([1.0], 1.0, RandomStream(0))
    with pytest.raises(ValueError):
        run_proposals([0.0], 2.0, RandomStream(0))
    with pytest.raises(ValueError):
        sample_yaglom_batch(SimParams(rho=1.2), 1, 0)
    with pytest.raises(ValueError):
        SpineControl(budget=0.0)
    with pytest.raises(ValueError):
        estimate_C_rho(-1.0, 10, SimParams(rho=2.0), 0)
