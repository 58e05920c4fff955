"""Explicit instances from the welfare analysis, the replication table, and a
seeded random search for bad equilibria."""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import bounds
from .bestresponse import (DeviationFamily, best_response_dynamics, equilibrium_diagnostics,
                           poa_ratio, rfpa_lemma_checks, uniform_fpa_diagnostics,
                           verify_equilibrium)
from .mechanisms import MechanismSpec, qpfpa_probabilities
from .model import BidProfile, Instance, ModelError, liquid_welfare
from .optimum import (opt_fractional, opt_fractional_bruteforce, opt_integral,
                      single_query_fractional_greedy)


# -- generators ----------------------------------------------------------------

def gen_single_query_gap(n: int) -> Instance:
    """n unit-budget bidders who all value the single query at n."""
    if n < 1:
        raise ModelError("need at least one bidder")
    return Instance([1.0] * n, [[float(n)]] * n)


def gen_single_query_gap_randomtie(n: int, eps: float):
    """The gap instance with bidder 0's budget raised to 2 + eps, plus the
    profile in which everyone bids their budget."""
    if n < 2 or not eps > 0:
        raise ModelError("need n >= 2 and eps > 0")
    budgets = [2.0 + eps] + [1.0] * (n - 1)
    inst = Instance(budgets, [[float(n)]] * n)
    return inst, BidProfile(np.array(budgets)[:, None])


def gen_uniform_ipoa(n: int, eps: float):
    """Uniform-bidding instance whose equilibrium keeps only about a 1/n
    share of the integral optimum, with its equilibrium multipliers."""
    if n < 2 or not (0 < eps < 1):
        raise ModelError("need n >= 2 and 0 < eps < 1")
    v = np.zeros((n, n))
    v[0, 0] = 1.0 + eps
    v[0, 1:] = 2.0 * eps
    for i in range(1, n):
        v[i, 0] = 1.0 / eps
        v[i, i] = 1.0
    inst = Instance([math.inf] + [1.0] * (n - 1), v)
    return inst, BidProfile.uniform(inst, [1.0] + [eps] * (n - 1))


def gen_fractional_beats_integral_pair() -> Instance:
    return Instance([1.0, 1.0], [[2.0], [2.0]])


def random_instance(rng: np.random.Generator, n: int, q: int, small_values: bool = False) -> Instance:
    """Log-uniform values in [1e-2, 1e2]; each budget is +inf with probability
    1/2 and otherwise log-uniform on the same range, or, with
    ``small_values``, at least the bidder's largest value."""
    lo, hi = math.log(1e-2), math.log(1e2)
    v = np.exp(rng.uniform(lo, hi, (n, q)))
    inf = rng.random(n) < 0.5
    if small_values:
        finite = v.max(axis=1) * np.exp(rng.uniform(0.0, math.log(10.0), n))
    else:
        finite = np.exp(rng.uniform(lo, hi, n))
    return Instance(np.where(inf, math.inf, finite), v)


def random_init(rng, instance: Instance, uniform: bool = False) -> BidProfile:
    if uniform:
        return BidProfile.uniform(instance, rng.uniform(0.0, 1.0, instance.num_bidders))
    return BidProfile(instance.values * rng.uniform(0.0, 1.0, instance.values.shape))


# -- samples --------------------------------------------------------------------

MECHANISMS = ("fpa", "fpa-uniform", "rfpa", "rfpa-uniform", "qpfpa")


def mechanism_for(name: str, alpha: Optional[float] = None):
    """(MechanismSpec, DeviationFamily) for a search mechanism name."""
    if name not in MECHANISMS:
        raise ModelError(f"unknown mechanism {name!r}; choose from {', '.join(MECHANISMS)}")
    uniform = name.endswith("-uniform")
    base = name.split("-")[0]
    if base == "fpa":
        mech = MechanismSpec.fpa()
    elif base == "rfpa":
        mech = MechanismSpec.rfpa(alpha if alpha is not None else 1.4)
    else:
        mech = MechanismSpec.qpfpa(alpha if alpha is not None else 2.0)
    return mech, DeviationFamily.default_for(mech, uniform)


@dataclass
class Sample:
    index: int
    instance: Instance
    profile: Optional[BidProfile]
    converged: bool
    poa: float = math.nan
    ipoa: float = math.nan
    failed_checks: int = 0


def run_sample(mechanism: MechanismSpec, family: DeviationFamily, instance: Instance, rng,
               index: int = 0, diagnostics: bool = False, max_rounds: int = 100) -> Sample:
    init = random_init(rng, instance, family.uniform)
    dyn = best_response_dynamics(instance, mechanism, family, init, max_rounds=max_rounds)
    if not dyn.converged:
        return Sample(index, instance, dyn.profile, False)
    opt = opt_fractional(instance)
    iopt = opt_integral(instance)
    pr = poa_ratio(instance, mechanism, dyn.profile, opt, iopt)
    failed = 0
    if diagnostics:
        if mechanism.kind == "fpa" and family.uniform:
            checks = uniform_fpa_diagnostics(instance, dyn.profile, mechanism.tie, opt)
        elif mechanism.kind == "fpa":
            checks = equilibrium_diagnostics(instance, dyn.profile, mechanism.tie, opt, iopt)
        elif mechanism.kind == "rfpa" and not family.uniform:
            checks = rfpa_lemma_checks(instance, mechanism, dyn.profile, family)
        else:
            checks = []
        failed = sum(not c.passed for c in checks)
    return Sample(index, instance, dyn.profile, True, pr.poa, pr.ipoa, failed)


def _ordered_map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def sample_suite(mechanism: MechanismSpec, family: DeviationFamily, samples: int, seed: int,
                 sizes: Callable, small_values: bool = False, diagnostics: bool = True,
                 threads: Optional[int] = None, stream: int = 0, start: int = 0) -> List[Sample]:
    """Random instances with sizes drawn by ``sizes(rng) -> (n, q)``; sample k
    uses its own generator seeded by (seed, stream, k)."""
    def one(k):
        rng = np.random.default_rng([seed, stream, k])
        n, q = sizes(rng)
        inst = random_instance(rng, n, q, small_values)
        return run_sample(mechanism, family, inst, rng, k, diagnostics)
    return _ordered_map(one, range(start, start + samples), threads)


def converged_suite(mechanism: MechanismSpec, family: DeviationFamily, target: int, seed: int,
                    sizes: Callable, small_values: bool = False, diagnostics: bool = True,
                    threads: Optional[int] = None, stream: int = 0):
    """The first ``target`` converged samples of a stream, plus the number of
    draws it took.  Non-converged draws are skipped, never retried."""
    ok, drawn = [], 0
    while len(ok) < target:
        batch = target - len(ok) if drawn == 0 else 2 * (target - len(ok)) + 8
        res = sample_suite(mechanism, family, batch, seed, sizes, small_values, diagnostics,
                           threads, stream, start=drawn)
        drawn += batch
        ok.extend(s for s in res if s.converged)
        if drawn > 10 * target + 100:
            break
    return ok[:target], ok[target - 1].index + 1 if len(ok) >= target else drawn


@dataclass
class SearchResult:
    mechanism: str
    samples: int
    converged: int
    best_poa: float
    best_ipoa: float
    poa_witness: Optional[Sample]
    ipoa_witness: Optional[Sample]
    violations: List[str] = field(default_factory=list)


def _paper_limits(name, n, instance):
    """Upper bounds the analysis proves for this mechanism family."""
    limits = {}
    if name == "fpa":
        limits["poa"] = 2.0 if (instance.values <= instance.budgets[:, None]).all() else float(n)
        limits["ipoa"] = 2.0
    elif name == "fpa-uniform":
        limits["poa"] = float(n)
    return limits


def worst_case_search(mechanism: str, n: int, q: int, samples: int, seed: int,
                      alpha: Optional[float] = None, threads: Optional[int] = None,
                      tol: float = 1e-6) -> SearchResult:
    """Largest Opt/LW and I-Opt/LW over equilibria reached by dynamics on
    random instances; ties keep the earliest sample."""
    mech, family = mechanism_for(mechanism, alpha)
    if mechanism.startswith("rfpa") and n != 2:
        raise ModelError("rFPA search needs n = 2")
    if family.kind == "fpa_subset" and q > 24:
        raise ModelError("exact FPA verification is limited to 24 queries")
    res = sample_suite(mech, family, samples, seed, lambda rng: (n, q), diagnostics=False,
                       threads=threads)
    ok = [s for s in res if s.converged]
    best_p = max(ok, key=lambda s: s.poa, default=None)
    best_i = max(ok, key=lambda s: s.ipoa, default=None)
    violations = []
    for s in ok:
        for key, limit in _paper_limits(mechanism, n, s.instance).items():
            if getattr(s, key) > limit + tol:
                violations.append(f"sample {s.index}: {key} {getattr(s, key):.12g} > {limit}")
    return SearchResult(mechanism, samples, len(ok),
                        best_p.poa if best_p else math.nan, best_i.ipoa if best_i else math.nan,
                        best_p, best_i, violations)


# -- replication table ------------------------------------------------------------

@dataclass
class ReplicationRow:
    name: str
    claimed: float
    measured: float
    direction: str
    tolerance: float
    runtime_ms: int = 0
    note: str = ""

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.measured):
            return False
        if self.direction == "upper":
            return self.measured <= self.claimed + self.tolerance
        if self.direction == "lower":
            return self.measured >= self.claimed - self.tolerance
        return abs(self.measured - self.claimed) <= self.tolerance

    def to_dict(self, timings: bool = False) -> dict:
        d = {"name": self.name, "claimed": self.claimed, "measured": self.measured,
             "direction": self.direction, "tolerance": self.tolerance, "pass": self.passed,
             "note": self.note}
        if timings:
            d["runtime_ms"] = self.runtime_ms
        return d


DEFAULT_TOLERANCES: Dict[str, float] = {
    "gap": 1e-7,
    "fpa_poa": 1e-6,
    "fpa_ipoa": 1e-6,
    "fpa_small_v": 1e-6,
    "uniform_ipoa": 0.0,
    "uniform_poa": 1e-4,
    "rfpa_cert": 1e-4,
    "rfpa_uniform_cert": 1e-3,
    "qp_limit": 1e-3,
    "oracle_greedy": 1e-9,
    "oracle_grid": 1e-9,
}

# full-scale sample counts; ``scale`` multiplies them
SUITE_SIZES = {"fpa": 10_000, "fpa_small_v": 2_000, "uniform": 1_000, "rfpa": 200,
               "qp": 1_000, "greedy": 1_000, "grid": 200}


def _sizes_upto(nmax, qmax):
    return lambda rng: (int(rng.integers(1, nmax + 1)), int(rng.integers(1, qmax + 1)))


def _rfpa_sizes(rng):
    return 2, int(rng.integers(1, 4))


def _count(scale, key):
    return max(1, int(round(SUITE_SIZES[key] * scale)))


def _timed(fn):
    t = time.perf_counter()
    rows = fn()
    ms = int(round(1000 * (time.perf_counter() - t)))
    for r in rows:
        r.runtime_ms = ms
    return rows


def _rows_gap(tol, ctx):
    err_f = err_i = 0.0
    for n in range(2, 9):
        inst = gen_single_query_gap(n)
        err_f = max(err_f, abs(opt_fractional(inst).value - n))
        err_i = max(err_i, abs(opt_integral(inst).value - 1.0))
    inst = gen_single_query_gap(4)
    dyn = best_response_dynamics(inst, MechanismSpec.fpa())
    pr = poa_ratio(inst, MechanismSpec.fpa(), dyn.profile)
    pair = gen_fractional_beats_integral_pair()
    return [
        ReplicationRow("gap_opt_fractional_error", 0.0, err_f, "upper", tol["gap"],
                       note="max |Opt - n| over n = 2..8"),
        ReplicationRow("gap_opt_integral_error", 0.0, err_i, "upper", tol["gap"],
                       note="max |I-Opt - 1| over n = 2..8"),
        ReplicationRow("gap_fpa_poa_n4", 4.0, pr.poa, "equal", tol["gap"],
                       note="FPA equilibrium from dynamics, n = 4"),
        ReplicationRow("pair_opt_minus_iopt", 1.0,
                       opt_fractional(pair).value - opt_integral(pair).value, "equal", tol["gap"]),
    ]


def _rows_randomtie(tol, ctx):
    n, eps = 4, 0.01
    inst, prof = gen_single_query_gap_randomtie(n, eps)
    mech = MechanismSpec.fpa()
    rep = verify_equilibrium(inst, mech, prof)
    pr = poa_ratio(inst, mech, prof)
    return [
        ReplicationRow("randomtie_equilibrium", 1.0, float(rep.is_equilibrium), "equal", 0.0),
        ReplicationRow("randomtie_poa", n / 2.0, pr.poa, "lower", 2 * eps,
                       note="Opt/LW >= n/2 - O(eps), n = 4, eps = 0.01"),
    ]


def _rows_fpa(tol, ctx):
    mech, fam = MechanismSpec.fpa(), DeviationFamily("fpa_subset")
    ok, drawn = converged_suite(mech, fam, _count(ctx["scale"], "fpa"), ctx["seed"],
                                _sizes_upto(4, 4), threads=ctx["threads"], stream=1)
    ok_small, drawn_small = converged_suite(mech, fam, _count(ctx["scale"], "fpa_small_v"),
                                            ctx["seed"], _sizes_upto(4, 4), small_values=True,
                                            threads=ctx["threads"], stream=2)
    gap_n = max((s.poa - s.instance.num_bidders for s in ok), default=math.nan)
    note = f"{len(ok)} equilibria from {drawn} draws"
    return [
        ReplicationRow("fpa_poa_minus_n", 0.0, gap_n, "upper", tol["fpa_poa"], note=note),
        ReplicationRow("fpa_diagnostic_failures", 0.0, float(sum(s.failed_checks for s in ok)),
                       "equal", 0.0, note=note),
        ReplicationRow("fpa_ipoa", 2.0, max((s.ipoa for s in ok), default=math.nan), "upper",
                       tol["fpa_ipoa"], note=note),
        ReplicationRow("fpa_small_values_poa", 2.0, max((s.poa for s in ok_small), default=math.nan),
                       "upper", tol["fpa_small_v"],
                       note=f"v <= B; {len(ok_small)} equilibria from {drawn_small} draws"),
        ReplicationRow("fpa_small_values_diagnostic_failures", 0.0,
                       float(sum(s.failed_checks for s in ok_small)), "equal", 0.0),
    ]


def _rows_uniform_ipoa(tol, ctx):
    n, eps = 4, 0.01
    inst, prof = gen_uniform_ipoa(n, eps)
    mech = MechanismSpec.fpa()
    rep = verify_equilibrium(inst, mech, prof, DeviationFamily("uniform_scan"))
    lw = liquid_welfare(inst, mech.allocate(inst, prof).allocation)
    iopt = opt_integral(inst).value
    return [
        ReplicationRow("uniform_ipoa_equilibrium", 1.0, float(rep.is_equilibrium), "equal", 0.0),
        ReplicationRow("uniform_ipoa_lw_share", 1.0 / n + 3 * eps, lw / (n + eps), "upper",
                       tol["uniform_ipoa"], note=f"I-Opt = {iopt:.12g}"),
    ]


def _rows_uniform(tol, ctx):
    mech, fam = MechanismSpec.fpa(), DeviationFamily("uniform_scan")
    ok, drawn = converged_suite(mech, fam, _count(ctx["scale"], "uniform"), ctx["seed"],
                                _sizes_upto(4, 4), threads=ctx["threads"], stream=3)
    return [
        ReplicationRow("uniform_fpa_poa_minus_n", 0.0,
                       max((s.poa - s.instance.num_bidders for s in ok), default=math.nan),
                       "upper", tol["uniform_poa"], note=f"{len(ok)} equilibria from {drawn} draws"),
        ReplicationRow("uniform_fpa_diagnostic_failures", 0.0,
                       float(sum(s.failed_checks for s in ok)), "equal", 0.0),
    ]


def _rows_rfpa(tol, ctx):
    cert = bounds.certify_rfpa(1.4, 0.44, 0.56)
    mech, fam = MechanismSpec.rfpa(1.4), DeviationFamily("grid")
    ok, drawn = converged_suite(mech, fam, _count(ctx["scale"], "rfpa"), ctx["seed"],
                                _rfpa_sizes, threads=ctx["threads"], stream=4)
    return [
        ReplicationRow("rfpa_certificate", 1.0 / 1.8, cert.value, "lower", tol["rfpa_cert"],
                       note=f"argmin beta {cert.argmin_beta:.6g}"),
        ReplicationRow("rfpa_lemma_failures", 0.0, float(sum(s.failed_checks for s in ok)),
                       "equal", 0.0, note=f"{len(ok)} grid equilibria from {drawn} draws"),
    ]


def _rows_rfpa_uniform(tol, ctx):
    certs = [bounds.certify_rfpa(a, 0.33, None, uniform=True) for a in (7.62, 7.63)]
    best = max(certs, key=lambda c: c.value)
    clears = [f"{c.alpha:g}" for c in certs if c.value >= 1 / 1.5 - tol["rfpa_uniform_cert"]]
    note = "gamma = 1 - eta assumed; clears at alpha " + (", ".join(clears) or "none")
    return [ReplicationRow("rfpa_uniform_certificate", 1.0 / 1.5, best.value, "lower",
                           tol["rfpa_uniform_cert"], note=note)]


def qp_spend_samples(samples: int, seed: int):
    """Locally optimal quasi-proportional bids against random rivals.

    Returns ``samples`` (spend, bound) pairs: the query's total expected
    spend and the lower bound it must satisfy with eta set to the bidder's win probability
    or a larger random value.
    """
    out = []
    k = -1
    while len(out) < samples:
        k += 1
        rng = np.random.default_rng([seed, 5, k])
        n = int(rng.integers(2, 11))
        alpha = float(np.exp(rng.uniform(0.0, math.log(50.0))))
        v = float(np.exp(rng.uniform(math.log(1e-2), math.log(1e2))))
        rivals = v * np.exp(rng.uniform(math.log(1e-2), math.log(2.0), n - 1))
        K = float((rivals ** alpha).sum())
        b = bounds.qp_stationary_bid(v, K, alpha)
        bids = np.concatenate([[b], rivals])
        p = qpfpa_probabilities(bids, alpha)
        if not (0.0 < p[0] < 1.0):
            continue
        eta = max(p[0], float(rng.uniform(p[0], 1.0)))
        if eta >= 1.0:
            continue
        out.append((float(p @ bids), bounds.qp_spend_lowerbound(v, eta, alpha, n)))
    return out


def _rows_qp(tol, ctx):
    err = max(abs(bounds.qp_poa_bound(e, 1e6, n) - (1.0 / e + 1.0))
              for e in (0.25, 0.5, 0.9) for n in (2, 10))
    pairs = qp_spend_samples(_count(ctx["scale"], "qp"), ctx["seed"])
    viol = sum(s < lb * (1 - 1e-12) for s, lb in pairs)
    return [
        ReplicationRow("qp_poa_limit_error", 0.0, err, "upper", tol["qp_limit"],
                       note="alpha = 1e6, eta in {0.25, 0.5, 0.9}, n in {2, 10}"),
        ReplicationRow("qp_spend_bound_violations", 0.0, float(viol), "equal", 0.0,
                       note=f"{len(pairs)} locally optimal profiles"),
    ]


def _rows_oracles(tol, ctx):
    err = 0.0
    for k in range(_count(ctx["scale"], "greedy")):
        rng = np.random.default_rng([ctx["seed"], 6, k])
        inst = random_instance(rng, int(rng.integers(1, 7)), 1)
        err = max(err, abs(opt_fractional(inst).value - single_query_fractional_greedy(inst).value))
    worst = -math.inf
    g = 6
    for k in range(_count(ctx["scale"], "grid")):
        rng = np.random.default_rng([ctx["seed"], 7, k])
        n = int(rng.integers(1, 4))
        q = int(rng.integers(1, 6 // n + 1))
        inst = random_instance(rng, n, q)
        lp = opt_fractional(inst).value
        grid = opt_fractional_bruteforce(inst, g)
        slack = float(instance_resolution(inst, g))
        worst = max(worst, grid - lp, lp - grid - slack)
    return [
        ReplicationRow("oracle_greedy_error", 0.0, err, "upper", tol["oracle_greedy"]),
        ReplicationRow("oracle_grid_excess", 0.0, worst, "upper", tol["oracle_grid"],
                       note=f"grid 1/{g}; measured is the worst excess over the resolution band"),
    ]


def instance_resolution(instance: Instance, grid_steps: int) -> float:
    """How far the best 1/g-grid allocation can fall below the LP optimum.

    Rounding every entry of an optimal allocation down to the grid keeps it
    feasible and costs at most v_ij / g per entry.
    """
    return float(instance.values.sum() / grid_steps)


def _rows_determinism(tol, ctx):
    mech, fam = MechanismSpec.fpa(), DeviationFamily("fpa_subset")
    a = sample_suite(mech, fam, 20, ctx["seed"], _sizes_upto(3, 3), threads=1, stream=8)
    b = sample_suite(mech, fam, 20, ctx["seed"], _sizes_upto(3, 3), threads=3, stream=8)
    same = all(x.converged == y.converged and x.profile == y.profile and
               (x.poa == y.poa or (math.isnan(x.poa) and math.isnan(y.poa))) for x, y in zip(a, b))
    return [ReplicationRow("determinism_threads", 1.0, float(same), "equal", 0.0,
                           note="20 samples, 1 vs 3 threads")]


ROW_GROUPS = [
    ("gap", _rows_gap),
    ("randomtie", _rows_randomtie),
    ("fpa", _rows_fpa),
    ("uniform_ipoa", _rows_uniform_ipoa),
    ("uniform", _rows_uniform),
    ("rfpa", _rows_rfpa),
    ("rfpa_uniform", _rows_rfpa_uniform),
    ("qp", _rows_qp),
    ("oracles", _rows_oracles),
    ("determinism", _rows_determinism),
]


def replicate_all(tolerances: Optional[Dict[str, float]] = None, seed: int = 0,
                  threads: Optional[int] = None, only: Optional[List[str]] = None,
                  scale: float = 1.0) -> List[ReplicationRow]:
    """Run every replication group (or those named in ``only``).

    A group that raises is reported as a failing row instead of aborting.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    ctx = {"seed": seed, "threads": threads, "scale": scale}
    rows: List[ReplicationRow] = []
    for name, fn in ROW_GROUPS:
        if only is not None and name not in only:
            continue
        try:
            rows.extend(_timed(lambda: fn(tol, ctx)))
        except Exception as exc:  # recorded, not thrown
            rows.append(ReplicationRow(name, 0.0, math.nan, "equal", 0.0,
                                       note=f"error: {type(exc).__name__}: {exc}"))
    return rows
