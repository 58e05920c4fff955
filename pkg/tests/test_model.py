import math

import numpy as np
import pytest
from hypothesis import given

from autobid.model import (Allocation, BidProfile, Instance, ModelError, liquid_welfare,
                           load_bids, load_instance, save_bids, save_instance, zero_profile)

from conftest import instances


def test_liquid_welfare_by_hand():
    inst = Instance([1.0, math.inf], [[3.0, 1.0], [2.0, 5.0]])
    alloc = Allocation([[1.0, 0.0], [0.0, 0.5]])
    # min(1, 3) + min(inf, 2.5)
    assert liquid_welfare(inst, alloc) == pytest.approx(3.5)


@pytest.mark.parametrize("budgets, values", [
    ([1.0], [[-1.0]]),
    ([0.0], [[1.0]]),
    ([1.0, 2.0], [[1.0]]),
    ([1.0], [[math.nan]]),
    ([1.0], [[math.inf]]),
    ([1.0], [1.0]),
])
def test_bad_instances_rejected(budgets, values):
    with pytest.raises(ModelError):
        Instance(budgets, values)


def test_bad_bids_rejected():
    with pytest.raises(ModelError):
        BidProfile([[-1.0]])
    with pytest.raises(ModelError):
        BidProfile([[math.inf]])
    inst = Instance([1.0], [[1.0, 2.0]])
    with pytest.raises(ModelError):
        BidProfile([[1.0]]).check_against(inst)


def test_uniform_profile_tracks_values():
    inst = Instance([1.0, 2.0], [[1.0, 2.0], [3.0, 4.0]])
    prof = BidProfile.uniform(inst, [0.5, 0.25])
    assert prof.mode == "uniform"
    np.testing.assert_allclose(prof.bids, [[0.5, 1.0], [0.75, 1.0]])
    moved = prof.with_bidder(1, multiplier=1.0, instance=inst)
    np.testing.assert_allclose(moved.bids[1], [3.0, 4.0])
    assert moved.multipliers[0] == 0.5


def test_zero_profile():
    inst = Instance([1.0, 2.0], [[1.0, 2.0], [3.0, 4.0]])
    assert not zero_profile(inst).bids.any()
    assert zero_profile(inst, uniform=True).mode == "uniform"


@given(instances())
def test_instance_json_round_trip(inst):
    assert load_instance(save_instance(inst)) == inst


@given(instances())
def test_bids_json_round_trip(inst):
    prof = BidProfile(inst.values * 0.5)
    back = load_bids(save_bids(prof), inst)
    np.testing.assert_array_equal(back.bids, prof.bids)


@given(instances())
def test_welfare_never_exceeds_caps(inst):
    n, q = inst.values.shape
    alloc = Allocation(np.full((n, q), 1.0 / n))
    lw = liquid_welfare(inst, alloc)
    assert 0.0 <= lw <= inst.welfare_caps.sum() + 1e-9
