"""Liquid-welfare benchmarks.

``opt_fractional`` solves the LP over randomized allocations with the
in-repo simplex, ``opt_integral`` runs an exact branch-and-bound over
deterministic allocations.  The grid search and the single-query greedy
are independent oracles used to check the LP.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT
from .model import Allocation, Instance, ModelError, liquid_welfare
from .simplex import SimplexError, maximize


class SearchBudgetExceeded(RuntimeError):
    """The integral search would need more nodes than allowed."""


@dataclass(frozen=True)
class OptResult:
    value: float
    allocation: Allocation
    exact: bool


def _lp(instance: Instance):
    n, q = instance.values.shape
    nv = n * q + n  # pi (row-major) then u
    rows, rhs = [], []
    for i in range(n):
        row = np.zeros(nv)
        row[n * q + i] = 1.0
        row[i * q:(i + 1) * q] = -instance.values[i]
        rows.append(row)
        rhs.append(0.0)
    for i in range(n):
        if math.isfinite(instance.budgets[i]):
            row = np.zeros(nv)
            row[n * q + i] = 1.0
            rows.append(row)
            rhs.append(instance.budgets[i])
    for j in range(q):
        row = np.zeros(nv)
        row[j:n * q:q] = 1.0
        rows.append(row)
        rhs.append(1.0)
    c = np.zeros(nv)
    c[n * q:] = 1.0
    return c, np.array(rows), np.array(rhs)


def opt_fractional(instance: Instance, tol=DEFAULT) -> OptResult:
    n, q = instance.values.shape
    c, A, b = _lp(instance)
    res = maximize(c, A, b, tol=tol.pivot_tol)
    pi = np.clip(res.x[:n * q].reshape(n, q), 0.0, 1.0)
    over = pi.sum(axis=0)
    pi = pi / np.maximum(over, 1.0)
    alloc = Allocation(pi)
    value = liquid_welfare(instance, alloc)
    if abs(value - res.objective) > 1e-7 * max(1.0, abs(value)):
        raise SimplexError(
            f"LP objective {res.objective!r} disagrees with recovered welfare {value!r}",
            res.iterations)
    return OptResult(value=value, allocation=alloc, exact=False)


def opt_integral(instance: Instance, node_cap: int = 10**8) -> OptResult:
    n, q = instance.values.shape
    v = instance.values.tolist()
    B = instance.budgets.tolist()
    suffix = [[sum(v[i][j:]) for i in range(n)] for j in range(q + 1)]

    acc = [0.0] * n
    assign = [-1] * q
    best_val = -1.0
    best_assign = None
    nodes = 0

    def lw(vals):
        return sum(min(B[i], vals[i]) for i in range(n))

    def rec(j):
        nonlocal best_val, best_assign, nodes
        nodes += 1
        if nodes > node_cap:
            raise SearchBudgetExceeded(
                f"instance too large: integral search exceeded {node_cap} nodes")
        if j == q:
            val = lw(acc)
            if val > best_val + 1e-12:
                best_val, best_assign = val, list(assign)
            return
        bound = sum(min(B[i], acc[i] + suffix[j][i]) for i in range(n))
        if bound <= best_val + 1e-12:
            return
        gains = [(min(B[i], acc[i] + v[i][j]) - min(B[i], acc[i]), i)
                 for i in range(n) if v[i][j] > 0]
        gains.sort(key=lambda t: (-t[0], t[1]))
        for _, i in gains:
            acc[i] += v[i][j]
            assign[j] = i
            rec(j + 1)
            acc[i] -= v[i][j]
        assign[j] = -1
        rec(j + 1)

    rec(0)
    pi = np.zeros((n, q))
    for j, i in enumerate(best_assign):
        if i >= 0:
            pi[i, j] = 1.0
    alloc = Allocation(pi)
    return OptResult(value=liquid_welfare(instance, alloc), allocation=alloc, exact=True)


def _query_grid(n, g):
    """All (k_1..k_n) with k_i >= 0 and sum <= g, via stars and bars."""
    out = []
    for bars in itertools.combinations(range(g + n), n):
        parts, prev = [], -1
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        out.append(parts)
    return np.array(out, dtype=float)


def opt_fractional_bruteforce(instance: Instance, grid_steps: int, max_points: int = 5 * 10**7) -> float:
    """Best liquid welfare over allocations whose entries are multiples of 1/grid_steps."""
    n, q = instance.values.shape
    if n * q > 6:
        raise ModelError("grid oracle limited to n * |Q| <= 6")
    if grid_steps < 1:
        raise ModelError("grid_steps must be positive")
    K = _query_grid(n, grid_steps) / grid_steps
    B = instance.budgets
    acc = np.zeros((1, n))
    for j in range(q):
        step = K * instance.values[:, j]
        if acc.shape[0] * step.shape[0] > max_points:
            raise ModelError("grid oracle too large; lower grid_steps")
        acc = (acc[:, None, :] + step[None, :, :]).reshape(-1, n)
        # capping at B early is exact because welfare only sees min(B, .)
        acc = np.unique(np.minimum(acc, B), axis=0)
    return float(np.minimum(acc, B).sum(axis=1).max())


def single_query_fractional_greedy(instance: Instance) -> OptResult:
    n, q = instance.values.shape
    if q != 1:
        raise ModelError("greedy oracle needs exactly one query")
    v = instance.values[:, 0]
    order = sorted(range(n), key=lambda i: (-v[i], i))
    pi = np.zeros((n, 1))
    remaining = 1.0
    for i in order:
        if remaining <= 0 or v[i] <= 0:
            break
        share = remaining if math.isinf(instance.budgets[i]) else min(remaining, instance.budgets[i] / v[i])
        pi[i, 0] = share
        remaining -= share
    alloc = Allocation(pi)
    return OptResult(value=liquid_welfare(instance, alloc), allocation=alloc, exact=True)
