import json
import math

import numpy as np
import pytest

from bbm_yaglom.engine import SimParams
from bbm_yaglom.rng import RandomStream
from bbm_yaglom.spinediag import (
    SpineWeightRecord, bridge_nodes, bridge_prefactor, verify_W_martingale, verify_bridge_representation, verify_spine_selection,
)
from scipy import integrate


def test_weight_record():
    rec = SpineWeightRecord.from_positions([0.0, 1.0], 1.0, 2.0)
    assert rec.W == pytest.approx(math.exp(1.0) * (1 + math.exp(2.0)))
    assert rec.selection_probs().sum() == pytest.approx(1.0)


def test_W_martingale():
    rep = verify_W_martingale(SimParams(rho=1.0), 0.5, times=(0.5, 1.0), n=20_000, stream=RandomStream(1))
    assert rep.passed, rep.rows
    assert json.loads(rep.to_json())["name"] == "W_martingale"


def test_spine_selection():
    rep = verify_spine_selection(SimParams(rho=1.0), 0.5, 1.0, n=20_000, stream=RandomStream(2))
    assert rep.passed, (rep.rows, rep.details["pit"])
    # the spine branches at rate 2, so a lone particle at time t has probability e^{-2t}
    row = next(r for r in rep.rows if r["functional"] == "N_eq_1")
    assert abs(row["rhs"] - math.exp(-2.0)) <= 4 * row["rhs_se"]


def test_bridge_quadrature_nodes():
    x, t, rho = 1.0, 4.0, 2.0
    z, c = bridge_nodes(x, t, rho, m=40)
    direct = integrate.quad(lambda u: float(bridge_prefactor(u, x, t, rho)), 0, np.inf)[0]
    assert c.sum() == pytest.approx(direct, rel=1e-6)


def test_bridge_representation_small():
    rep = verify_bridge_representation(SimParams(rho=2.0), 1.0, 2.0, n=20_000, n_node=2_000, stream=RandomStream(3), m=16)
    assert rep.passed, rep.rows


def test_argument_errors():
    with pytest.raises(ValueError):
        verify_bridge_representation(SimParams(rho=1.0), 1.0, 1.0)
    with pytest.raises(ValueError):
        verify_spine_selection(SimParams(rho=1.0), 1.0, 0.0)
