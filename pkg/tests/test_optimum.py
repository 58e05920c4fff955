import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from scipy.optimize import linprog

from autobid.model import Instance, ModelError, liquid_welfare, Allocation
from autobid.optimum import (SearchBudgetExceeded, opt_fractional, opt_fractional_bruteforce,
                             opt_integral, single_query_fractional_greedy)

from conftest import instances


def _scipy_opt(inst):
    n, q = inst.values.shape
    nv = n * q + n
    A, b = [], []
    for i in range(n):
        row = np.zeros(nv)
        row[n * q + i] = 1
        row[i * q:(i + 1) * q] = -inst.values[i]
        A.append(row)
        b.append(0.0)
    for j in range(q):
        row = np.zeros(nv)
        row[j:n * q:q] = 1
        A.append(row)
        b.append(1.0)
    c = np.zeros(nv)
    c[n * q:] = -1
    bnds = [(0, None)] * (n * q) + [(0, None if math.isinf(B) else B) for B in inst.budgets]
    return -linprog(c, A_ub=A, b_ub=b, bounds=bnds, method="highs").fun


def _integral_bruteforce(inst):
    n, q = inst.values.shape
    best = 0.0
    for owners in itertools.product(range(-1, n), repeat=q):
        pi = np.zeros((n, q))
        for j, i in enumerate(owners):
            if i >= 0:
                pi[i, j] = 1
        best = max(best, liquid_welfare(inst, Allocation(pi)))
    return best


def test_split_query_by_hand():
    # bidder 0 takes 1/3 of the query (worth 1), bidder 1 the rest (worth 4/3)
    inst = Instance([1.0, 10.0], [[3.0], [2.0]])
    assert opt_fractional(inst).value == pytest.approx(7.0 / 3.0)
    assert opt_integral(inst).value == pytest.approx(2.0)


@given(instances(max_n=3, max_q=3))
def test_fractional_matches_scipy(inst):
    assert opt_fractional(inst).value == pytest.approx(_scipy_opt(inst), rel=1e-7, abs=1e-9)


@given(instances(max_n=3, max_q=4))
def test_integral_matches_enumeration(inst):
    assert opt_integral(inst).value == pytest.approx(_integral_bruteforce(inst), rel=1e-12)


@given(instances(max_n=3, max_q=3))
def test_chain_and_caps(inst):
    f, i = opt_fractional(inst).value, opt_integral(inst).value
    assert i <= f + 1e-9
    assert f <= inst.welfare_caps.sum() + 1e-9
    # the returned allocations realise the reported welfare
    assert liquid_welfare(inst, opt_integral(inst).allocation) == pytest.approx(i)


@given(instances(max_n=5, q=1))
def test_greedy_oracle(inst):
    assert opt_fractional(inst).value == pytest.approx(
        single_query_fractional_greedy(inst).value, rel=1e-9, abs=1e-9)


def test_grid_oracle_bounds():
    inst = Instance([1.0, 10.0], [[3.0], [2.0]])
    lp = opt_fractional(inst).value
    grid = opt_fractional_bruteforce(inst, 6)
    assert grid <= lp + 1e-9
    assert lp - grid <= inst.values.sum() / 6
    # 1/3 lies on the 1/6 grid so the grid finds the optimum exactly
    assert grid == pytest.approx(lp)


def test_oracle_guards():
    with pytest.raises(ModelError):
        single_query_fractional_greedy(Instance([1.0], [[1.0, 1.0]]))
    with pytest.raises(ModelError):
        opt_fractional_bruteforce(Instance([1.0] * 3, np.ones((3, 3))), 4)


def test_integral_node_cap():
    inst = Instance([math.inf] * 4, np.ones((4, 8)))
    with pytest.raises(SearchBudgetExceeded):
        opt_integral(inst, node_cap=10)
