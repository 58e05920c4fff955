import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autobid.mechanisms import (MechanismSpec, TieBreak, UnsupportedConfiguration, fpa_winners,
                                qpfpa_probabilities, rfpa_win_probability)
from autobid.model import BidProfile, Instance, ModelError

from conftest import instance_and_bids

bids = st.floats(min_value=1e-3, max_value=1e3)


def test_fpa_pays_own_bid():
    inst = Instance([5.0, 5.0], [[2.0, 2.0], [2.0, 2.0]])
    out = MechanismSpec.fpa().allocate(inst, BidProfile([[1.0, 0.2], [0.5, 0.3]]))
    np.testing.assert_array_equal(out.pi, [[1, 0], [0, 1]])
    np.testing.assert_allclose(out.expected_payment, [[1.0, 0.0], [0.0, 0.3]])


@pytest.mark.parametrize("tie, winner", [
    (TieBreak("lowest"), 0), (TieBreak("highest"), 2), (TieBreak("permutation", (1, 2, 0)), 1),
])
def test_tie_rules(tie, winner):
    b = np.array([[1.0], [1.0], [1.0]])
    assert fpa_winners(b, tie)[0] == winner


def test_tie_parse_round_trip():
    for text in ("lowest", "highest", "perm:2,0,1"):
        assert TieBreak.parse(text).to_text() == text
    with pytest.raises(ModelError):
        TieBreak.parse("perm:0,0")


def test_all_zero_query_unallocated():
    assert fpa_winners(np.zeros((2, 1)), TieBreak())[0] == -1


def test_rfpa_probability_values():
    assert rfpa_win_probability(1.0, 1.0, 2.0) == pytest.approx(0.5)
    assert rfpa_win_probability(2.0, 1.0, 2.0) == pytest.approx(1.0)
    # 1/2 (1 + ln 1.2 / ln 1.4)
    assert rfpa_win_probability(1.2, 1.0, 1.4) == pytest.approx(0.5 * (1 + math.log(1.2) / math.log(1.4)))
    assert rfpa_win_probability(1.0, 0.0, 1.4) == 1.0


def test_rfpa_needs_two_bidders():
    with pytest.raises(UnsupportedConfiguration):
        MechanismSpec.rfpa(1.4).check_instance(Instance([1, 1, 1], [[1], [1], [1]]))
    with pytest.raises(ModelError):
        MechanismSpec.rfpa(1.0)
    with pytest.raises(ModelError):
        MechanismSpec.qpfpa(0.5)


@given(bids, bids, st.floats(1.01, 20.0))
def test_rfpa_symmetric(a, b, alpha):
    mech = MechanismSpec.rfpa(alpha)
    inst = Instance([1.0, 1.0], [[1.0], [1.0]])
    p = mech.allocate(inst, BidProfile([[a], [b]])).pi[:, 0]
    q = mech.allocate(inst, BidProfile([[b], [a]])).pi[:, 0]
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(q[1])
    if a >= b:
        assert p[0] >= 0.5 - 1e-12


@given(st.lists(bids, min_size=1, max_size=6), st.floats(1.0, 1e6))
def test_qp_probabilities_sum_to_one(col, alpha):
    p = qpfpa_probabilities(np.array(col), alpha)
    assert p.sum() == pytest.approx(1.0)
    assert (p >= 0).all()


@given(st.lists(bids, min_size=2, max_size=5), st.floats(1.0, 50.0), st.floats(1.01, 3.0))
def test_qp_own_probability_monotone(col, alpha, factor):
    col = np.array(col)
    before = qpfpa_probabilities(col, alpha)[0]
    col[0] *= factor
    assert qpfpa_probabilities(col, alpha)[0] >= before - 1e-12


def test_qp_extreme_alpha_is_stable():
    p = qpfpa_probabilities(np.array([1e3, 1e-3]), 1e6)
    assert p[0] == 1.0 and not np.isnan(p).any()


@given(instance_and_bids(), st.sampled_from(["fpa", "qpfpa"]))
def test_allocations_are_feasible(data, kind):
    inst, b = data
    mech = MechanismSpec.fpa() if kind == "fpa" else MechanismSpec.qpfpa(2.0)
    out = mech.allocate(inst, BidProfile(b))
    cols = out.pi.sum(axis=0)
    assert (cols <= 1 + 1e-12).all()
    np.testing.assert_allclose(out.expected_payment, out.pi * b)
    # a query goes unsold only when nobody bids
    assert ((cols > 0) == (b.max(axis=0) > 0)).all()


@given(instance_and_bids())
def test_fpa_winner_holds_top_bid(data):
    inst, b = data
    w = fpa_winners(b, TieBreak())
    for j, i in enumerate(w):
        if i >= 0:
            assert b[i, j] == b[:, j].max()
