import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autobid.bestresponse import (DeviationFamily, DiagnosticCheck, best_response,
                                  best_response_dynamics, best_response_fpa,
                                  best_response_uniform, equilibrium_diagnostics, fpa_partition,
                                  poa_ratio, rfpa_lemma_checks, uniform_fpa_diagnostics,
                                  verify_equilibrium)
from autobid.config import DEFAULT
from autobid.mechanisms import MechanismSpec, TieBreak, UnsupportedConfiguration
from autobid.model import BidProfile, Instance, ModelError, zero_profile
from autobid.paperlab import gen_uniform_ipoa, random_init

from conftest import instance_and_bids, instances


def _oracle_fpa_value(inst, b, i):
    """Best reachable value for bidder i by enumerating won sets directly."""
    n, q = b.shape
    v, B = inst.values[i], inst.budgets[i]
    cost = np.zeros(q)
    for j in range(q):
        p = max((b[k, j] for k in range(n) if k != i), default=0.0)
        # lowest-index tie rule: i wins a tie only against higher indices
        tied_lower = any(b[k, j] == p for k in range(i) if k != i)
        cost[j] = p + DEFAULT.margin(p) if (tied_lower and p > 0) else p
    best = 0.0
    for S in itertools.product([0, 1], repeat=q):
        S = np.array(S, dtype=bool)
        val, c = v[S].sum(), cost[S].sum()
        if c <= min(B, val) + DEFAULT.feas_abs:
            best = max(best, val)
    return best


@given(instance_and_bids(max_n=3, max_q=4), st.data())
def test_fpa_best_response_matches_enumeration(data, draw):
    inst, b = data
    i = draw.draw(st.integers(0, inst.num_bidders - 1))
    dev = best_response_fpa(inst, i, b)
    assert dev.value == pytest.approx(_oracle_fpa_value(inst, b, i), rel=1e-9, abs=1e-12)
    # the returned row really achieves that value and is feasible
    out = MechanismSpec.fpa().allocate(inst, BidProfile(b).with_bidder(i, row=dev.row))
    assert out.value_of_bidder(inst, i) == pytest.approx(dev.value, rel=1e-9, abs=1e-12)
    assert out.spend_of_bidder(i) <= min(inst.budgets[i], dev.value) + 1e-9


def test_equal_budget_pair_is_equilibrium():
    inst = Instance([1.0, 1.0], [[2.0], [2.0]])
    rep = verify_equilibrium(inst, MechanismSpec.fpa(), BidProfile([[1.0], [1.0]]))
    assert rep.is_equilibrium and rep.feasible
    assert rep.to_dict()["family"] == "fpa_subset"


def test_zero_bids_are_not_equilibrium():
    inst = Instance([1.0, 1.0], [[2.0], [2.0]])
    rep = verify_equilibrium(inst, MechanismSpec.fpa(), zero_profile(inst))
    assert not rep.is_equilibrium
    assert rep.best_deviation_gain == pytest.approx(2.0)


def test_overspending_profile_is_infeasible():
    inst = Instance([1.0, 1.0], [[2.0], [2.0]])
    rep = verify_equilibrium(inst, MechanismSpec.fpa(), BidProfile([[1.5], [0.0]]))
    assert not rep.feasible and not rep.is_equilibrium
    assert rep.per_bidder[0]["feasible"] is False


def test_uniform_construction_best_responses():
    eps = 0.01
    inst, prof = gen_uniform_ipoa(4, eps)
    mech = MechanismSpec.fpa()
    for i in range(1, 4):
        # per-query: win query i over bidder 0's bid 2 eps
        assert best_response_fpa(inst, i, prof).value == pytest.approx(1.0)
        # one multiplier: query 0 is unaffordable, so nothing is worth winning
        dev = best_response_uniform(inst, i, mech, prof)
        assert dev.value == 0.0
    assert verify_equilibrium(inst, mech, prof, DeviationFamily("uniform_scan")).is_equilibrium
    assert not verify_equilibrium(inst, mech, BidProfile(prof.bids)).is_equilibrium


def test_dynamics_reach_gap_equilibrium():
    inst = Instance([1.0] * 3, [[3.0]] * 3)
    dyn = best_response_dynamics(inst, MechanismSpec.fpa())
    assert dyn.converged
    pr = poa_ratio(inst, MechanismSpec.fpa(), dyn.profile)
    assert pr.poa == pytest.approx(3.0) and pr.ipoa == pytest.approx(1.0)


@given(instances(max_n=3, max_q=3), st.integers(0, 2**32 - 1))
def test_dynamics_output_verifies_and_passes_diagnostics(inst, seed):
    mech = MechanismSpec.fpa()
    init = random_init(np.random.default_rng(seed), inst)
    dyn = best_response_dynamics(inst, mech, init=init)
    if not dyn.converged:
        return
    assert verify_equilibrium(inst, mech, dyn.profile).is_equilibrium
    checks = equilibrium_diagnostics(inst, dyn.profile)
    assert all(c.passed for c in checks), [c.to_dict() for c in checks if not c.passed]
    pr = poa_ratio(inst, mech, dyn.profile)
    assert pr.poa <= inst.num_bidders + 1e-6
    assert pr.ipoa <= 2 + 1e-6


@given(instances(max_n=3, max_q=3), st.integers(0, 2**32 - 1))
def test_uniform_dynamics(inst, seed):
    mech, fam = MechanismSpec.fpa(), DeviationFamily("uniform_scan")
    init = random_init(np.random.default_rng(seed), inst, uniform=True)
    dyn = best_response_dynamics(inst, mech, fam, init)
    if not dyn.converged:
        return
    assert dyn.profile.mode == "uniform"
    assert all(c.passed for c in uniform_fpa_diagnostics(inst, dyn.profile))


def test_rfpa_grid_dynamics_keep_welfare():
    inst = Instance([0.5, math.inf], [[3.0, 1.0], [2.0, 4.0]])
    mech = MechanismSpec.rfpa(1.4)
    dyn = best_response_dynamics(inst, mech, DeviationFamily("grid"))
    assert dyn.converged
    pr = poa_ratio(inst, mech, dyn.profile)
    assert pr.lw > 0
    assert all(c.passed for c in rfpa_lemma_checks(inst, mech, dyn.profile))


def test_randomized_uniform_best_response_is_feasible():
    inst = Instance([0.3, 2.0], [[1.0, 2.0], [1.5, 0.5]])
    for mech in (MechanismSpec.rfpa(2.0), MechanismSpec.qpfpa(3.0)):
        prof = BidProfile.uniform(inst, [0.5, 0.5])
        dev = best_response_uniform(inst, 0, mech, prof)
        assert 0.0 <= dev.multiplier <= 1.0
        out = mech.allocate(inst, prof.with_bidder(0, multiplier=dev.multiplier, instance=inst))
        assert out.spend_of_bidder(0) <= 0.3 + 1e-9
        assert out.value_of_bidder(inst, 0) == pytest.approx(dev.value)


def test_family_validation():
    with pytest.raises(ModelError):
        DeviationFamily("bogus")
    assert DeviationFamily().grid_ratio(1.4) == pytest.approx(1.4 ** (4 / 63))
    inst = Instance([1.0, 1.0], [[1.0], [1.0]])
    with pytest.raises(UnsupportedConfiguration):
        best_response(inst, MechanismSpec.rfpa(1.4), zero_profile(inst), 0, DeviationFamily())
    with pytest.raises(ModelError):
        verify_equilibrium(inst, MechanismSpec.fpa(), zero_profile(inst), DeviationFamily("uniform_scan"))


def test_partition_and_checks():
    inst = Instance([1.0, 5.0], [[2.0, 1.0], [1.0, 1.0]])
    part = fpa_partition(inst, BidProfile([[1.0, 0.0], [0.0, 0.5]]))
    assert part.A_B == [0] and part.A_Bbar == [1]
    assert part.won == [[0], [1]]
    assert DiagnosticCheck("x", 1.0, 1.5, 0.5).passed
    assert not DiagnosticCheck("x", 1.0, 1.5, 0.4).passed


def test_poa_ratio_edge_cases():
    inst = Instance([1.0, 1.0], [[2.0], [2.0]])
    assert poa_ratio(inst, MechanismSpec.fpa(), zero_profile(inst)).poa == math.inf


def test_threads_do_not_change_verdict():
    inst = Instance([1.0, 2.0, math.inf], [[1.0, 2.0], [2.0, 1.0], [0.5, 0.5]])
    mech = MechanismSpec.fpa(TieBreak("highest"))
    dyn = best_response_dynamics(inst, mech)
    a = verify_equilibrium(inst, mech, dyn.profile).to_dict()
    b = verify_equilibrium(inst, mech, dyn.profile, threads=3).to_dict()
    assert a == b
