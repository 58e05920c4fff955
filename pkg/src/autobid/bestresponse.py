"""Best responses, equilibrium verification, best-response dynamics and the
equilibrium diagnostics used by the price-of-anarchy arguments.

A deviation is judged exactly as in the equilibrium definition: it counts
only if it raises the deviator's value by more than ``epsilon`` while its
spend stays within min(budget, value).  Deviations that must outbid a rival
(tie-break unfavourable, or a zero price) pay the rival's bid plus the margin
``tol.margin(price)``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .config import DEFAULT, Tolerances
from .mechanisms import MechanismSpec, TieBreak, UnsupportedConfiguration
from .model import BidProfile, Instance, ModelError, Outcome, zero_profile

MAX_SUBSET_QUERIES = 24
_LOW_BITS = 16


@dataclass(frozen=True)
class DeviationFamily:
    """Which deviations a verifier or best response searches.

    kinds: ``fpa_subset`` (exact for FPA), ``uniform_scan`` (one multiplier),
    ``grid_per_query`` (one query's bid on a geometric grid), ``scale_all``
    (all own bids rescaled), ``grid`` (both grid families together).
    """

    kind: str = "fpa_subset"
    grid_steps: int = 64
    scale_steps: int = 128
    span: float = 2.0
    uniform_steps: int = 256

    def __post_init__(self):
        if self.kind not in ("fpa_subset", "uniform_scan", "grid_per_query", "scale_all", "grid"):
            raise ModelError(f"unknown deviation family {self.kind!r}")
        if self.grid_steps < 2 or self.scale_steps < 2 or self.uniform_steps < 2:
            raise ModelError("deviation grids need at least two points")

    @property
    def uniform(self) -> bool:
        return self.kind == "uniform_scan"

    @property
    def exact_for(self):
        return self.kind in ("fpa_subset", "uniform_scan")

    def grid_ratio(self, alpha: float) -> float:
        """Ratio between neighbouring per-query grid points."""
        return float(alpha ** (2.0 * self.span / (self.grid_steps - 1)))

    @classmethod
    def default_for(cls, mechanism: MechanismSpec, uniform: bool = False) -> "DeviationFamily":
        if uniform:
            return cls("uniform_scan")
        return cls("fpa_subset" if mechanism.kind == "fpa" else "grid")


@dataclass
class Deviation:
    value: float
    spend: float
    row: np.ndarray
    multiplier: Optional[float] = None
    won: Optional[Tuple[int, ...]] = None


@dataclass
class EquilibriumReport:
    feasible: bool
    best_deviation_gain: float
    epsilon: float
    family: str
    per_bidder: List[dict]
    diagnostics: list = field(default_factory=list)

    @property
    def is_equilibrium(self) -> bool:
        return self.feasible and self.best_deviation_gain <= self.epsilon

    def to_dict(self) -> dict:
        return {
            "is_equilibrium": self.is_equilibrium,
            "feasible": self.feasible,
            "best_deviation_gain": self.best_deviation_gain,
            "epsilon": self.epsilon,
            "family": self.family,
            "per_bidder": self.per_bidder,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


# -- helpers ---------------------------------------------------------------

def _feasible(spend, value, budget, tol: Tolerances):
    return spend <= np.minimum(budget, value) + tol.feas_abs


def check_feasibility(instance: Instance, mechanism: MechanismSpec, bids: BidProfile,
                      tol: Tolerances = DEFAULT) -> np.ndarray:
    """Per-bidder budget and ROS check: Spend(i) <= min(B_i, V_i) + feas_abs."""
    out = mechanism.allocate(instance, bids)
    return _feasible(out.bidder_spend(), out.bidder_value(instance), instance.budgets, tol)


def _binding(spend, value, budget, tol):
    if spend >= budget - tol.feas_abs and math.isfinite(budget):
        return "budget"
    if value > 0 and spend >= value - tol.feas_abs:
        return "ros"
    return "none"


def fpa_prices(instance: Instance, b: np.ndarray, i: int, tie: TieBreak, tol: Tolerances = DEFAULT):
    """Opposing price per query and what bidder i must pay to take it.

    Returns (price, cost, tie_wins) where tie_wins marks queries bidder i
    wins by matching the price exactly.
    """
    n, q = b.shape
    others = np.array([k for k in range(n) if k != i], dtype=int)
    if others.size == 0:
        price = np.zeros(q)
        tie_wins = np.zeros(q, dtype=bool)
    else:
        ob = b[others]
        price = ob.max(axis=0)
        rank = tie.ranks(n)
        better = ((ob == price) & (rank[others][:, None] < rank[i])).any(axis=0)
        tie_wins = (price > 0) & ~better
    cost = np.where(tie_wins, price, price + tol.margin(price))
    return price, cost, tie_wins


def _subset_sums(x):
    s = np.zeros(1)
    for xk in x:
        s = np.concatenate([s, s + xk])
    return s


def _best_subset(v, c, budget, tol):
    """Exact max of sum v over subsets with sum c <= min(budget, sum v).

    Ties go to the cheaper subset, then to the smaller bitmask.
    """
    m = len(v)
    lo = min(m, _LOW_BITS)
    v_lo, c_lo = _subset_sums(v[:lo]), _subset_sums(c[:lo])
    best = (0.0, 0.0, 0)
    for hi in range(1 << (m - lo)):
        hv = sum(v[lo + k] for k in range(m - lo) if hi >> k & 1)
        hc = sum(c[lo + k] for k in range(m - lo) if hi >> k & 1)
        V = v_lo + hv
        C = c_lo + hc
        ok = _feasible(C, V, budget, tol)
        if not ok.any():
            continue
        vmax = V[ok].max()
        cand = np.flatnonzero(ok & (V == vmax))
        k = cand[np.argmin(C[cand])]
        if vmax > best[0] or (vmax == best[0] and C[k] < best[1]):
            best = (float(vmax), float(C[k]), (hi << lo) | int(k))
    return best


def _losing_bids(instance, i, price, tie_wins, style):
    """Highest bids that still lose each query.

    ``value`` caps them at min(v_ij, B_i); ``block`` goes right up to the
    winning bid, which only matters if the bidder ends up winning, and then
    the next best response repairs it.
    """
    cap = np.where(tie_wins, np.nextafter(price, 0.0), price)
    cap = np.where(price > 0, cap, 0.0)
    if style == "block":
        return cap
    return np.minimum(np.minimum(instance.values[i], instance.budgets[i]), cap)


def best_response_fpa(instance: Instance, i: int, bids, tie: TieBreak = TieBreak(),
                      tol: Tolerances = DEFAULT, losing: str = "value") -> Deviation:
    """Exact per-query best response in FPA by subset enumeration.

    The returned bids win the chosen set and spread the remaining headroom
    min(B_i, value) - cost over it in proportion to value, so rivals face the
    highest prices the bidder can afford; lost queries carry losing bids in
    the given style.
    """
    if losing not in ("value", "block"):
        raise ModelError(f"unknown losing-bid style {losing!r}")
    b = bids.bids if isinstance(bids, BidProfile) else np.asarray(bids, dtype=float)
    if b.shape[1] > MAX_SUBSET_QUERIES:
        raise ModelError(f"exact subset best response limited to {MAX_SUBSET_QUERIES} queries")
    v = instance.values[i]
    price, cost, tie_wins = fpa_prices(instance, b, i, tie, tol)
    useful = np.flatnonzero(v > 0)
    value, spend, mask = _best_subset(v[useful], cost[useful], instance.budgets[i], tol)
    won = tuple(int(useful[k]) for k in range(len(useful)) if mask >> k & 1)

    row = _losing_bids(instance, i, price, tie_wins, losing)
    if won:
        idx = list(won)
        headroom = max(0.0, min(instance.budgets[i], value) - cost[idx].sum())
        row[idx] = cost[idx] + headroom * v[idx] / v[idx].sum()
        spend = float(row[idx].sum())
    return Deviation(value=value, spend=spend, row=row, won=won)


# -- win probabilities for one bidder against fixed rivals -----------------

def _win_prob(mechanism: MechanismSpec, x, opp, i_rank_wins=False):
    """Probability of winning with bid(s) x against rival bids ``opp``."""
    x = np.asarray(x, dtype=float)
    if mechanism.kind == "fpa":
        p = opp.max() if opp.size else 0.0
        return (((x > p) | ((x == p) & i_rank_wins)) & (x > 0)).astype(float)
    if mechanism.kind == "rfpa":
        o = float(opp[0])
        if o <= 0:
            return (x > 0).astype(float)
        with np.errstate(divide="ignore"):
            p = 0.5 * (1.0 + np.log(x / o) / np.log(mechanism.alpha))
        return np.where(x > 0, np.clip(p, 0.0, 1.0), 0.0)
    pos = opp[opp > 0]
    if pos.size == 0:
        return (x > 0).astype(float)
    la = mechanism.alpha * np.log(pos)
    log_k = la.max() + np.log(np.exp(la - la.max()).sum())
    with np.errstate(divide="ignore", over="ignore"):
        z = log_k - mechanism.alpha * np.log(x)
        p = 1.0 / (1.0 + np.exp(np.minimum(z, 700.0)))
    return np.where(x > 0, p, 0.0)


def _rivals(b, i):
    return np.delete(b, i, axis=0)


def _tie_flags(instance, b, i, mechanism):
    if mechanism.kind != "fpa":
        return np.zeros(b.shape[1], dtype=bool)
    return fpa_prices(instance, b, i, mechanism.tie)[2]


def _row_outcome(instance, mechanism, b, i, row, flags):
    """(value, spend) for bidder i bidding ``row`` (k x q array allowed)."""
    row = np.atleast_2d(row)
    opp = _rivals(b, i)
    P = np.column_stack([_win_prob(mechanism, row[:, j], opp[:, j], flags[j])
                         for j in range(b.shape[1])])
    return P @ instance.values[i], (P * row).sum(axis=1)


# -- uniform bidding ---------------------------------------------------------

def _uniform_fpa(instance, i, b, tie, tol):
    v = instance.values[i]
    price, cost, tie_wins = fpa_prices(instance, b, i, tie, tol)
    pos = v > 0

    def evaluate(m):
        x = m * v
        won = pos & (x > 0) & ((x > price) | ((x == price) & tie_wins))
        val = float(v[won].sum())
        return val, m * val, won

    cands = {0.0}
    for j in np.flatnonzero(pos):
        m = cost[j] / v[j]
        if m * v[j] < cost[j]:
            m = np.nextafter(m, np.inf)
        cands.add(float(m))
        cands.add(float(price[j] / v[j]))
    best = None
    for m in sorted(cands):
        if m > 1.0:
            break
        val, sp, won = evaluate(m)
        if _feasible(sp, val, instance.budgets[i], tol) and (best is None or val > best[0]):
            best = (val, sp, m, won)
    val, sp, m, won = best

    # raise the multiplier as far as the won set and constraints allow
    top = 1.0
    if val > 0:
        top = min(top, min(instance.budgets[i], val) / val)
    for j in np.flatnonzero(pos & ~won):
        t = price[j] / v[j]
        top = min(top, float(np.nextafter(t, 0.0)) if tie_wins[j] or price[j] <= 0 else t)
    if top > m:
        val2, sp2, won2 = evaluate(top)
        if np.array_equal(won2, won) and _feasible(sp2, val2, instance.budgets[i], tol):
            m, sp = top, sp2
    return Deviation(value=val, spend=sp, row=m * v, multiplier=m,
                     won=tuple(int(j) for j in np.flatnonzero(won)))


def _uniform_randomized(instance, mechanism, i, b, family, tol):
    v = instance.values[i]
    flags = np.zeros(b.shape[1], dtype=bool)

    def evaluate(ms):
        val, sp = _row_outcome(instance, mechanism, b, i, np.outer(ms, v), flags)
        return val, sp

    grid = np.linspace(0.0, 1.0, family.uniform_steps + 1)
    val, sp = evaluate(grid)
    ok = _feasible(sp, val, instance.budgets[i], tol)
    # spend is monotone in the multiplier, so feasibility is a prefix
    last = int(np.flatnonzero(~ok)[0]) - 1 if not ok.all() else len(grid) - 1
    lo = grid[last]
    if last < len(grid) - 1:
        hi = grid[last + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            vm, sm = evaluate(np.array([mid]))
            if _feasible(sm[0], vm[0], instance.budgets[i], tol):
                lo = mid
            else:
                hi = mid
    vm, sm = evaluate(np.array([lo]))
    return Deviation(value=float(vm[0]), spend=float(sm[0]), row=lo * v, multiplier=float(lo))


def best_response_uniform(instance: Instance, i: int, mechanism: MechanismSpec, bids: BidProfile,
                          family: Optional[DeviationFamily] = None,
                          tol: Tolerances = DEFAULT) -> Deviation:
    """Best single multiplier for bidder i against fixed rival bids.

    FPA: scan the price/value breakpoints (exact up to the outbid margin).
    Randomized rules: spend and value rise monotonically with the multiplier
    and ROS holds for every multiplier <= 1, so the best response is the
    largest multiplier in [0, 1] whose spend fits the budget.
    """
    family = family or DeviationFamily("uniform_scan")
    b = bids.bids
    if mechanism.kind == "fpa":
        return _uniform_fpa(instance, i, b, mechanism.tie, tol)
    return _uniform_randomized(instance, mechanism, i, b, family, tol)


# -- grid families -----------------------------------------------------------

def _query_grid(family, alpha, ref):
    if ref <= 0:
        return np.zeros(1)
    exps = np.linspace(-family.span, family.span, family.grid_steps)
    return np.concatenate([[0.0], ref * alpha ** exps])


def grid_reference(instance, b, i, j):
    opp = _rivals(b, i)[:, j]
    if opp.size and opp.max() > 0:
        return float(opp.max())
    if b[i, j] > 0:
        return float(b[i, j])
    return float(min(instance.values[i, j], instance.budgets[i]))


def best_grid_deviation(instance: Instance, mechanism: MechanismSpec, bids: BidProfile, i: int,
                        family: DeviationFamily, outcome: Optional[Outcome] = None,
                        tol: Tolerances = DEFAULT) -> Optional[Deviation]:
    """Best feasible deviation in the grid families, or None if none is feasible."""
    b = bids.bids
    outcome = outcome or mechanism.allocate(instance, bids)
    v = instance.values[i]
    alpha = mechanism.alpha if mechanism.kind != "fpa" else 2.0
    flags = _tie_flags(instance, b, i, mechanism)
    cur_pi, cur_pay = outcome.pi[i], outcome.expected_payment[i]
    V, S = float(cur_pi @ v), float(cur_pay.sum())
    opp = _rivals(b, i)
    best = None

    def consider(vals, spends, rows):
        nonlocal best
        ok = _feasible(spends, vals, instance.budgets[i], tol)
        if not ok.any():
            return
        idx = np.flatnonzero(ok)
        vmax = vals[idx].max()
        cand = idx[vals[idx] == vmax]
        k = cand[np.argmin(spends[cand])]
        if best is None or vmax > best.value or (vmax == best.value and spends[k] < best.spend):
            best = Deviation(value=float(vmax), spend=float(spends[k]), row=rows(k))

    if family.kind in ("grid_per_query", "grid"):
        for j in range(b.shape[1]):
            grid = _query_grid(family, alpha, grid_reference(instance, b, i, j))
            p = _win_prob(mechanism, grid, opp[:, j], flags[j])
            vals = V - cur_pi[j] * v[j] + p * v[j]
            spends = S - cur_pay[j] + p * grid

            def rows(k, j=j, grid=grid):
                r = b[i].copy()
                r[j] = grid[k]
                return r
            consider(vals, spends, rows)
    if family.kind in ("scale_all", "grid") and b[i].any():
        factors = np.concatenate([[0.0], alpha ** np.linspace(-family.span, family.span, family.scale_steps)])
        X = np.outer(factors, b[i])
        vals, spends = _row_outcome(instance, mechanism, b, i, X, flags)
        consider(vals, spends, lambda k: X[k].copy())
    return best


# -- dispatch ----------------------------------------------------------------

def best_response(instance: Instance, mechanism: MechanismSpec, bids: BidProfile, i: int,
                  family: DeviationFamily, outcome: Optional[Outcome] = None,
                  tol: Tolerances = DEFAULT, losing: str = "value") -> Optional[Deviation]:
    if family.kind == "fpa_subset":
        if mechanism.kind != "fpa":
            raise UnsupportedConfiguration("subset deviations are exact only for FPA")
        return best_response_fpa(instance, i, bids, mechanism.tie, tol, losing)
    if family.kind == "uniform_scan":
        return best_response_uniform(instance, i, mechanism, bids, family, tol)
    return best_grid_deviation(instance, mechanism, bids, i, family, outcome, tol)


def _apply(instance, bids: BidProfile, i, dev: Deviation) -> BidProfile:
    if bids.multipliers is not None and dev.multiplier is not None:
        return bids.with_bidder(i, multiplier=dev.multiplier, instance=instance)
    if bids.multipliers is not None:
        raise ModelError("per-query deviation applied to a uniform profile")
    return bids.with_bidder(i, row=dev.row)


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def verify_equilibrium(instance: Instance, mechanism: MechanismSpec, bids: BidProfile,
                       family: Optional[DeviationFamily] = None, epsilon: Optional[float] = None,
                       tol: Tolerances = DEFAULT, threads: Optional[int] = None) -> EquilibriumReport:
    mechanism.check_instance(instance)
    bids.check_against(instance)
    family = family or DeviationFamily.default_for(mechanism, bids.multipliers is not None)
    if family.uniform and bids.multipliers is None:
        raise ModelError("uniform deviations need a uniform bid profile")
    eps = instance.default_epsilon(tol) if epsilon is None else float(epsilon)
    out = mechanism.allocate(instance, bids)
    value = out.bidder_value(instance)
    spend = out.bidder_spend()
    feas = _feasible(spend, value, instance.budgets, tol)

    def gain_of(i):
        dev = best_response(instance, mechanism, bids, i, family, out, tol)
        return -math.inf if dev is None else dev.value - float(value[i])

    gains = _map(gain_of, range(instance.num_bidders), threads)
    per = []
    for i in range(instance.num_bidders):
        per.append({
            "bidder": i,
            "value": float(value[i]),
            "spend": float(spend[i]),
            "feasible": bool(feas[i]),
            "binding": _binding(spend[i], value[i], instance.budgets[i], tol),
            "deviation_gain": float(gains[i]),
        })
    return EquilibriumReport(feasible=bool(feas.all()), best_deviation_gain=float(max(gains)),
                             epsilon=eps, family=family.kind, per_bidder=per)


@dataclass
class DynamicsResult:
    profile: BidProfile
    converged: bool
    rounds: int


def best_response_dynamics(instance: Instance, mechanism: MechanismSpec,
                           family: Optional[DeviationFamily] = None,
                           init: Optional[BidProfile] = None, max_rounds: int = 100,
                           epsilon: Optional[float] = None,
                           tol: Tolerances = DEFAULT) -> DynamicsResult:
    """Round-robin best responses in bidder order until the profile verifies.

    Exact families (FPA subsets, uniform scans) always adopt the computed best
    response; grid families move only on a gain above epsilon.  For FPA
    subsets a run that has not converged after ``max_rounds`` is repeated
    from ``init`` with blocking losing bids; ``rounds`` counts both passes.
    """
    mechanism.check_instance(instance)
    family = family or DeviationFamily.default_for(mechanism)
    eps = instance.default_epsilon(tol) if epsilon is None else float(epsilon)
    start = init if init is not None else zero_profile(instance, family.uniform)
    if family.uniform and start.multipliers is None:
        raise ModelError("uniform dynamics need a uniform initial profile")
    styles = ("value", "block") if family.kind == "fpa_subset" else ("value",)
    total = 0
    for style in styles:
        profile, ok, rounds = _run(instance, mechanism, family, start, max_rounds, eps, tol, style)
        total += rounds
        if ok:
            return DynamicsResult(profile, True, total)
    return DynamicsResult(profile, False, total)


def _run(instance, mechanism, family, profile, max_rounds, eps, tol, style):
    always = family.exact_for
    for r in range(1, max_rounds + 1):
        for i in range(instance.num_bidders):
            out = mechanism.allocate(instance, profile)
            val = out.value_of_bidder(instance, i)
            ok = bool(_feasible(out.spend_of_bidder(i), val, instance.budgets[i], tol))
            dev = best_response(instance, mechanism, profile, i, family, out, tol, style)
            if dev is None:
                if not ok:
                    profile = profile.with_bidder(i, row=np.zeros(instance.num_queries))
                continue
            if always or not ok or dev.value - val > eps:
                profile = _apply(instance, profile, i, dev)
        if verify_equilibrium(instance, mechanism, profile, family, eps, tol).is_equilibrium:
            return profile, True, r
    return profile, False, max_rounds


# -- diagnostics -------------------------------------------------------------

@dataclass
class DiagnosticCheck:
    """Named inequality lhs >= rhs - slack."""

    name: str
    lhs: float
    rhs: float
    slack: float
    bidder: Optional[int] = None
    query: Optional[int] = None

    @property
    def passed(self) -> bool:
        return self.lhs >= self.rhs - self.slack

    def to_dict(self) -> dict:
        d = {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
             "passed": self.passed}
        if self.bidder is not None:
            d["bidder"] = self.bidder
        if self.query is not None:
            d["query"] = self.query
        return d


@dataclass
class EquilibriumPartition:
    A_B: List[int]
    A_Bbar: List[int]
    won: List[List[int]]
    benchmark_won: Optional[List[List[int]]] = None

    def __post_init__(self):
        if sorted(self.A_B + self.A_Bbar) != list(range(len(self.won))):
            raise ModelError("partition must cover every bidder exactly once")


def fpa_partition(instance: Instance, bids: BidProfile, tie: TieBreak = TieBreak(),
                  benchmark=None) -> EquilibriumPartition:
    """A_B / A_Bbar split with won sets N(i) and, for a 0/1 benchmark, O(i)."""
    from .mechanisms import fpa_winners
    w = fpa_winners(bids.bids, tie)
    n = instance.num_bidders
    won = [[int(j) for j in np.flatnonzero(w == i)] for i in range(n)]
    V = [float(instance.values[i, won[i]].sum()) for i in range(n)]
    A_B = [i for i in range(n) if instance.budgets[i] <= V[i]]
    A_Bbar = [i for i in range(n) if instance.budgets[i] > V[i]]
    O = None
    if benchmark is not None:
        pi = benchmark.pi if hasattr(benchmark, "pi") else np.asarray(benchmark)
        O = [[int(j) for j in np.flatnonzero(pi[i] >= 1.0 - 1e-9)] for i in range(n)]
    return EquilibriumPartition(A_B, A_Bbar, won, O)


def _opt_of(instance, pi, idx):
    if not idx:
        return 0.0
    return float(np.minimum(instance.budgets[idx], (pi[idx] * instance.values[idx]).sum(axis=1)).sum())


def equilibrium_diagnostics(instance: Instance, bids: BidProfile, tie: TieBreak = TieBreak(),
                            benchmark=None, integral_benchmark=None,
                            epsilon: Optional[float] = None,
                            tol: Tolerances = DEFAULT) -> List[DiagnosticCheck]:
    """Every lemma inequality behind the FPA welfare bounds, evaluated on a profile.

    The outbid margin and epsilon turn each strict inequality in the
    arguments into one with slack ``s`` per query; per-query claims are only
    asserted where the corresponding deviation would gain more than epsilon.
    """
    from .optimum import opt_fractional, opt_integral
    n, q = instance.values.shape
    v, B = instance.values, instance.budgets
    eps = instance.default_epsilon(tol) if epsilon is None else float(epsilon)
    benchmark = benchmark or opt_fractional(instance, tol)
    integral_benchmark = integral_benchmark or opt_integral(instance)
    pi_star = benchmark.allocation.pi
    pi_int = integral_benchmark.allocation.pi

    mech = MechanismSpec.fpa(tie)
    out = mech.allocate(instance, bids)
    spend_q = out.query_spend()
    spend_i = out.bidder_spend()
    part = fpa_partition(instance, bids, tie, pi_int)
    N = part.won
    V = np.array([v[i, N[i]].sum() for i in range(n)])
    LW = np.minimum(B, V)
    lw_total = float(LW.sum())
    s = (q + 2) * float(tol.margin(bids.bids.max())) + 4 * tol.feas_abs
    agg = n * (q + 1) * (s + eps)
    checks: List[DiagnosticCheck] = []

    for i in range(n):
        checks.append(DiagnosticCheck("feasibility", float(min(B[i], V[i])), float(spend_i[i]),
                                      tol.feas_abs, bidder=i))

    def lost(i, pool=None):
        pool = range(q) if pool is None else pool
        return [j for j in pool if j not in N[i]]

    def split(i_set, pool_of):
        one = [i for i in i_set if any(v[i, j] + V[i] >= B[i] for j in lost(i, pool_of(i)))]
        return one, [i for i in i_set if i not in one]

    # bidders at their cap
    checks.append(DiagnosticCheck("A_B_cap", float(LW[part.A_B].sum()),
                                  _opt_of(instance, pi_star, part.A_B), 0.0))

    # fractional benchmark, every lost query
    for label, pi, pool_of in (("", pi_star, lambda i: None),
                               ("integral_", pi_int, lambda i: part.benchmark_won[i])):
        one, zero = split(part.A_Bbar, pool_of)
        for i in one:
            for j in lost(i, pool_of(i)):
                if v[i, j] + V[i] >= B[i] and v[i, j] > eps:
                    checks.append(DiagnosticCheck(label + "A_B1_spend", float(spend_q[j]),
                                                  float(B[i] - V[i]), s, bidder=i, query=j))
        for i in zero:
            for j in lost(i, pool_of(i)):
                if v[i, j] > eps:
                    checks.append(DiagnosticCheck(label + "A_B0_spend", float(spend_q[j]),
                                                  float(v[i, j]), s, bidder=i, query=j))
        for name, group in (("A_B1_sum", one), ("A_B0_sum", zero)):
            lhs = sum(spend_q[lost(i, pool_of(i))].sum() for i in group) + float(LW[group].sum())
            checks.append(DiagnosticCheck(label + name, float(lhs), _opt_of(instance, pi, group), agg))

    opt = benchmark.value
    iopt = integral_benchmark.value
    total_spend = float(spend_i.sum())
    checks.append(DiagnosticCheck("spend_le_LW", lw_total, total_spend, n * tol.feas_abs))
    checks.append(DiagnosticCheck("opt_chain", lw_total + (n - 1) * total_spend, opt, agg))
    checks.append(DiagnosticCheck("opt_le_n_LW", n * lw_total, opt, agg))
    checks.append(DiagnosticCheck("iopt_le_2_LW", 2 * lw_total, iopt, agg))

    # D(i): lost queries sold below value, robust to the outbid margin
    D = {i: [j for j in lost(i) if spend_q[j] < v[i, j] - s and v[i, j] > eps] for i in part.A_Bbar}
    for i, Di in D.items():
        for j in Di:
            checks.append(DiagnosticCheck("D_spend_budget", float(spend_q[j] + spend_i[i]),
                                          float(B[i]), s, bidder=i, query=j))
    if (v <= B[:, None]).all():
        for i, Di in D.items():
            for j in Di:
                checks.append(DiagnosticCheck("D_LW_greater_j", float(V[i]), float(v[i, j]), eps,
                                              bidder=i, query=j))
        zero = [i for i in part.A_Bbar if pi_star[i, D[i]].sum() >= 1.0]
        one = [i for i in part.A_Bbar if i not in zero]
        for i in one:
            lhs = sum(v[i, j] * (1 - pi_star[i, j]) + pi_star[i, j] * spend_q[j] for j in N[i])
            rhs = sum(pi_star[i, j] * (v[i, j] - spend_q[j]) for j in D[i])
            checks.append(DiagnosticCheck("D_pi_less_than_1", float(lhs), float(rhs),
                                          (q + 1) * (s + eps), bidder=i))
        lhs = sum(pi_star[i, D[i]] @ spend_q[D[i]] for i in zero) + float(LW[zero].sum())
        checks.append(DiagnosticCheck("small_v_A_B0_sum", float(lhs), _opt_of(instance, pi_star, zero), agg))
        lhs = float(LW[one].sum()) + sum(pi_star[i] @ spend_q for i in one)
        checks.append(DiagnosticCheck("small_v_A_B1_sum", float(lhs), _opt_of(instance, pi_star, one), agg))
        checks.append(DiagnosticCheck("small_v_opt_le_2_LW", 2 * lw_total, opt, agg))
    return checks


def uniform_fpa_diagnostics(instance: Instance, bids: BidProfile, tie: TieBreak = TieBreak(),
                            benchmark=None, epsilon: Optional[float] = None,
                            tol: Tolerances = DEFAULT) -> List[DiagnosticCheck]:
    """Checks for uniform-bidding FPA equilibria: multipliers above one win
    nothing, and Opt <= n * LW up to the epsilon slack."""
    from .optimum import opt_fractional
    if bids.multipliers is None:
        raise ModelError("uniform diagnostics need a uniform profile")
    n, q = instance.values.shape
    eps = instance.default_epsilon(tol) if epsilon is None else float(epsilon)
    benchmark = benchmark or opt_fractional(instance, tol)
    out = MechanismSpec.fpa(tie).allocate(instance, bids)
    value = out.bidder_value(instance)
    checks = []
    for i in range(n):
        if bids.multipliers[i] > 1.0:
            checks.append(DiagnosticCheck("large_mi", 0.0, float(value[i]), tol.feas_abs, bidder=i))
    lw = float(np.minimum(instance.budgets, value).sum())
    s = (q + 2) * float(tol.margin(bids.bids.max())) + 4 * tol.feas_abs
    checks.append(DiagnosticCheck("uniform_opt_le_n_LW", n * lw, benchmark.value,
                                  n * (q + 1) * (s + eps)))
    return checks


def rfpa_lemma_checks(instance: Instance, mechanism: MechanismSpec, bids: BidProfile,
                      family: Optional[DeviationFamily] = None, epsilon: Optional[float] = None,
                      tol: Tolerances = DEFAULT) -> List[DiagnosticCheck]:
    """Bid lower bounds that undominated rFPA equilibria must satisfy.

    A bidder whose value is below its budget would otherwise profit from a
    grid deviation.  With grid ratio r the bounds hold up to a factor r**2
    (sure wins) and r**4 (interior queries); a check is only asserted when
    the deviation used in the argument fits the bidder's budget headroom and
    gains more than epsilon.
    """
    if mechanism.kind != "rfpa":
        raise UnsupportedConfiguration("rFPA lemma checks need the rFPA mechanism")
    family = family or DeviationFamily("grid")
    eps = instance.default_epsilon(tol) if epsilon is None else float(epsilon)
    a = mechanism.alpha
    r = family.grid_ratio(a)
    step = math.log(r) / math.log(a)
    b, v, B = bids.bids, instance.values, instance.budgets
    out = mechanism.allocate(instance, bids)
    pi = out.pi
    value = out.bidder_value(instance)
    spend = out.bidder_spend()
    checks = []
    for i in range(2):
        o = 1 - i
        for j in range(instance.num_queries):
            if pi[i, j] == 1.0 and b[i, j] > 0 and value[o] < B[o]:
                # the loser could enter just above b/alpha
                head = B[o] - spend[o]
                cost = step * r * r * b[i, j] / a
                if head >= cost + tol.feas_abs and 0.5 * step * v[o, j] > eps:
                    checks.append(DiagnosticCheck("rfpa_sure_win_bid", float(b[i, j]),
                                                  float(a * v[o, j] / r ** 2), tol.abs_tol,
                                                  bidder=i, query=j))
            if 0.0 < pi[i, j] < 1.0 and value[i] < B[i]:
                x, y = b[i, j], b[o, j]
                if x * r * r >= a * y:
                    continue
                head = B[i] - spend[i]
                raise_cost = r * r * x - pi[i, j] * x
                if head >= raise_cost + tol.feas_abs and 0.5 * step * v[i, j] > eps:
                    beta = x / y
                    lb = v[i, j] / (1.0 + math.log(a) + math.log(beta))
                    checks.append(DiagnosticCheck("rfpa_interior_bid", float(x), float(lb / r ** 4),
                                                  tol.abs_tol, bidder=i, query=j))
    return checks


@dataclass
class PoaResult:
    poa: float
    ipoa: float
    lw: float
    opt: float
    iopt: float

    def to_dict(self) -> dict:
        return {"poa": self.poa, "ipoa": self.ipoa, "lw": self.lw, "opt": self.opt, "iopt": self.iopt}


def _ratio(top, lw):
    if top <= 0:
        return 1.0
    if lw <= 0:
        return math.inf
    return top / lw


def poa_ratio(instance: Instance, mechanism: MechanismSpec, bids: BidProfile,
              opt=None, iopt=None, tol: Tolerances = DEFAULT) -> PoaResult:
    """Opt / LW and I-Opt / LW with LW taken from the mechanism's outcome."""
    from .model import liquid_welfare
    from .optimum import opt_fractional, opt_integral
    opt = opt or opt_fractional(instance, tol)
    iopt = iopt or opt_integral(instance)
    lw = liquid_welfare(instance, mechanism.allocate(instance, bids).allocation)
    return PoaResult(_ratio(opt.value, lw), _ratio(iopt.value, lw), lw, opt.value, iopt.value)
