"""Acceptance suite: one test per criterion, run at the stated scale and tolerance.

Criteria 4 and 5 share one qsd-check run. The whole file takes about half an
hour on one core, dominated by the scaling sweep.
"""
import time

import pytest

from bbm_yaglom.config import parse_config
from bbm_yaglom.engine import SimParams
from bbm_yaglom.experiments import RUNNERS, analytic_checks, run
from bbm_yaglom.rng import RandomStream
from bbm_yaglom.spinediag import verify_W_martingale, verify_bridge_representation, verify_spine_selection

SEED = 20261017


def _failed(manifest):
    return [(v.name, v.statistic, v.detail) for v in manifest.verdicts if not v.passed]


def _run(tmp_path_factory, experiment, text=""):
    cfg = parse_config(f"seed: {SEED}\n" + text)
    return run(cfg, experiment, tmp_path_factory.mktemp(experiment))


@pytest.fixture(scope="session")
def qsd_run(tmp_path_factory):
    return _run(tmp_path_factory, "qsd-check")


def test_criterion_1_analytic_exactness():
    t0 = time.perf_counter()
    verdicts = analytic_checks(SEED)
    elapsed = time.perf_counter() - t0
    assert {v.name for v in verdicts} == {"tau_closed_form", "w_eigen_vs_images", "derivative_bands",
                                         "derivative_finite_difference", "T_dichotomy"}
    assert all(v.passed for v in verdicts), [(v.name, v.statistic) for v in verdicts if not v.passed]
    assert elapsed < 10.0


def test_criterion_2_coupling_invariants(tmp_path_factory):
    m = _run(tmp_path_factory, "coupling-check")
    assert m.config["replicas"] == 1000
    assert m.config["coupling"]["rho"] == 2.0 and m.config["coupling"]["delta"] == 1.0
    assert m.config["coupling"]["horizon"] == 6.0
    assert {v.name for v in m.verdicts} == {"domination_upper", "domination_lower", "domination_extinction"}
    assert m.passed, _failed(m)


def test_criterion_3_martingale_and_spine_identities():
    params = SimParams(rho=2.0)
    stream = RandomStream(SEED)
    w = verify_W_martingale(params, 1.0, times=(0.5, 1.0, 2.0), n=100_000, stream=stream.child(0))
    sel = verify_spine_selection(params, 1.0, 1.0, n=100_000, stream=stream.child(1))
    lem = verify_bridge_representation(params, 1.0, 4.0, n=100_000, n_node=10_000, stream=stream.child(2))
    assert all(abs(r["z"]) <= 3.0 for r in w.rows), w.rows
    # the criterion is the chi-square test of the spine label; the functional battery is reported only
    assert sel.details["pit"]["p_value"] >= 0.01, sel.details["pit"]
    assert all(abs(r["z"]) <= 3.0 for r in lem.rows), lem.rows


def test_criterion_4_yaglom_qsd_suite(qsd_run):
    s = qsd_run.summary
    assert s["accepted"] == 10_000 and s["rho"] == 2.0
    names = {v.name: v for v in qsd_run.verdicts}
    assert s["ks_pvalue"] >= 0.01 and names["zeta_exponential"].passed
    assert abs(s["identity_z"]) <= 3.0 and names["mean_identity"].passed
    assert s["qsd_pvalue"] >= 0.01 and names["qsd_in_law"].passed


def test_criterion_5_forward_backward(qsd_run):
    s = qsd_run.summary
    assert s["forward_survivors"] >= 500
    assert s["forward_pvalue"] >= 0.01, (s["forward_chi2"], s["forward_pvalue"])


def test_criterion_6_scaling_trends(tmp_path_factory):
    m = _run(tmp_path_factory, "scaling-sweep")
    assert m.summary["eps_list"] == [0.2, 0.1, 0.05]
    assert m.passed, _failed(m)


def test_criterion_7_truncated_moments(tmp_path_factory):
    m = _run(tmp_path_factory, "moments-check")
    assert m.config["replicas"] >= 100_000
    assert m.config["moments"]["t"] == 50.0 and m.config["moments"]["s"] == 10.0
    for name in ("count", "exp_weighted"):
        assert 0.5 <= m.summary["ratios"][name] <= 2.0
    assert m.passed, _failed(m)


# small settings so every experiment runs quickly; determinism does not depend on scale
_SMALL = {
    "survival-tail": "replicas: 20000\nt_grid: [1, 2]\n",
    "estimate-k": "replicas: 300\n",
    "sample-yaglom": "replicas: 40\n",
    "qsd-check": "replicas: 60\nqsd:\n  min_survivors: 3\n  forward_round: 200000\n",
    "scaling-sweep": "replicas: 10\neps_list: [0.6, 0.4]\nscaling:\n  max_proposals: 2000\n",
    "coupling-check": "replicas: 300\n",
    "moments-check": "replicas: 3000\nmoments:\n  t: 20\n  s: 5\n",
    "analytic-tables": "",
}


def _outputs(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix == ".csv"}


def test_criterion_8_reproducibility(tmp_path_factory):
    assert set(_SMALL) == set(RUNNERS)
    for experiment, text in _SMALL.items():
        cfg = parse_config(f"seed: {SEED}\n" + text)
        results = []
        for threads in (1, 4, 1):
            out = tmp_path_factory.mktemp(f"{experiment}-{threads}")
            m = run(cfg, experiment, out, threads=threads)
            assert m.verdicts and not any(v.name == "completed" for v in m.verdicts), (experiment, _failed(m))
            results.append((_outputs(out), m.to_json(volatile=False)))
        assert results[0] == results[1] == results[2], experiment
        assert results[0][0], experiment
