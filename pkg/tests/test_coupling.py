import json

import numpy as np
import pytest

from bbm_yaglom.configs import PointConfiguration
from bbm_yaglom.coupling import CoupledSnapshot, CoupledTriple, Labelled, check_domination_trace, run_coupled, run_coupled_batch
from bbm_yaglom.engine import SimParams
from bbm_yaglom.rng import RandomStream

INIT = PointConfiguration([0.5, 1.5, 2.5])
SNAPS = np.linspace(0.0, 6.0, 13)


def test_coupled_runs_respect_domination():
    triples = run_coupled_batch(SimParams(rho=2.0), [INIT] * 100, 1.0, SNAPS, RandomStream(1), 6.0)
    assert len(triples) == 100
    for tr in triples:
        rep = check_domination_trace(tr)
        assert rep.passed, rep.to_json()
        assert rep.checks > 0


def test_coupled_run_is_reproducible():
    a = run_coupled(SimParams(rho=2.0), INIT, 1.0, SNAPS, RandomStream(2))
    b = run_coupled(SimParams(rho=2.0), INIT, 1.0, SNAPS, RandomStream(2))
    assert a.extinction == b.extinction
    assert all(np.array_equal(x.X.pos, y.X.pos) for x, y in zip(a.snapshots, b.snapshots))
    assert a.window == pytest.approx(a.delta / a.eps)


def _triple(x, xu, xld, extinction=(1.0, 2.0, 0.5), eps=0.5):
    lab = lambda p: Labelled(np.arange(len(p)), np.asarray(p, dtype=float))
    snap = CoupledSnapshot(1.0, lab(x), lab(xu), lab(xld))
    return CoupledTriple((0,), 1.0, eps, 6.0, [snap], extinction)


def test_checker_flags_broken_orderings():
    good = _triple([1.0, 2.0], [1.5, 2.5], [1.0])
    assert check_domination_trace(good).passed
    bad_upper = check_domination_trace(_triple([1.0, 2.0], [1.5, 1.6], [1.0]))
    assert {f["kind"] for f in bad_upper.failures} >= {"upper", "lineage_upper"}
    bad_lower = check_domination_trace(_triple([1.0], [1.5], [1.0, 3.0]))
    assert "lower" in {f["kind"] for f in bad_lower.failures}
    bad_ext = check_domination_trace(_triple([1.0], [1.5], [1.0], extinction=(3.0, 2.0, 0.5)))
    assert "extinction_upper" in {f["kind"] for f in bad_ext.failures}
    merged = bad_upper.merge(bad_lower)
    assert not merged.passed and merged.checks == bad_upper.checks + bad_lower.checks
    assert json.loads(merged.to_json())["passed"] is False


def test_argument_errors():
    with pytest.raises(ValueError):
        run_coupled(SimParams(rho=1.0), INIT, 1.0, SNAPS, RandomStream(0))
    with pytest.raises(ValueError):
        run_coupled(SimParams(rho=2.0), INIT, 0.0, SNAPS, RandomStream(0))
    with pytest.raises(ValueError):
        run_coupled(SimParams(rho=2.0), INIT, 1.0, [7.0], RandomStream(0))
    with pytest.raises(ValueError):
        run_coupled_batch(SimParams(rho=2.0), [PointConfiguration()], 1.0, SNAPS, RandomStream(0), 6.0)
