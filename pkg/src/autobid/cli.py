"""Command-line entry point.

Every command prints JSON (sorted keys, floats to 12 significant digits) to
stdout or to ``--out``.  Exit status: 0 success, 1 invalid input, 2 numeric
or internal failure.
"""

import argparse
import csv
import io
import json
import math
import sys
from typing import List, Optional

import numpy as np

from . import bounds, paperlab
from .bestresponse import (DeviationFamily, best_response_dynamics, equilibrium_diagnostics,
                           poa_ratio, rfpa_lemma_checks, uniform_fpa_diagnostics,
                           verify_equilibrium)
from .mechanisms import MechanismSpec, TieBreak
from .model import ModelError, bids_to_dict, instance_to_dict, load_bids, load_instance
from .optimum import SearchBudgetExceeded, opt_fractional, opt_integral
from .simplex import SimplexError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _plain(x):
    """JSON-ready copy with floats rounded to 12 significant digits."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.12g}")
    return x


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _num(x):
    return f"{x:.12g}" if isinstance(x, float) else str(x)


def rows_to_csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    fields = list(rows[0].keys()) if rows else ["name", "claimed", "measured", "direction",
                                                 "tolerance", "pass", "note"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _num(v) for k, v in r.items()})
    return buf.getvalue()


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc.strerror}") from exc


def _mechanism(args) -> MechanismSpec:
    if args.mechanism == "fpa":
        return MechanismSpec.fpa(TieBreak.parse(args.tie))
    if args.alpha is None:
        raise ModelError(f"--alpha is required for {args.mechanism}")
    return MechanismSpec(args.mechanism, float(args.alpha))


def _family(args, mech, uniform):
    if getattr(args, "family", None):
        return DeviationFamily(args.family)
    return DeviationFamily.default_for(mech, uniform)


def _emit(args, text):
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ------------------------------------------------------------------

def cmd_opt(args):
    inst = load_instance(_read(args.instance))
    res = opt_fractional(inst) if args.mode == "fractional" else opt_integral(inst, args.node_cap)
    return {"mode": args.mode, "value": res.value, "exact": res.exact,
            "allocation": res.allocation.pi}


def _load_pair(args):
    inst = load_instance(_read(args.instance))
    bids = load_bids(_read(args.bids), inst)
    return inst, bids


def cmd_eq_verify(args):
    inst, bids = _load_pair(args)
    mech = _mechanism(args)
    fam = _family(args, mech, bids.multipliers is not None)
    rep = verify_equilibrium(inst, mech, bids, fam, args.epsilon, threads=args.threads)
    if args.diagnose:
        rep.diagnostics = _diagnostics(inst, mech, bids, fam, args.epsilon)
    return rep.to_dict()


def _diagnostics(inst, mech, bids, fam, eps):
    if mech.kind == "fpa" and bids.multipliers is not None:
        return uniform_fpa_diagnostics(inst, bids, mech.tie, epsilon=eps)
    if mech.kind == "fpa":
        return equilibrium_diagnostics(inst, bids, mech.tie, epsilon=eps)
    if mech.kind == "rfpa":
        return rfpa_lemma_checks(inst, mech, bids, fam, eps)
    return []


def cmd_eq_diagnose(args):
    inst, bids = _load_pair(args)
    mech = _mechanism(args)
    fam = _family(args, mech, bids.multipliers is not None)
    checks = _diagnostics(inst, mech, bids, fam, args.epsilon)
    return {"all_passed": all(c.passed for c in checks), "checks": [c.to_dict() for c in checks]}


def cmd_eq_dynamics(args):
    inst = load_instance(_read(args.instance))
    mech = _mechanism(args)
    init = load_bids(_read(args.init), inst) if args.init else None
    uniform = args.uniform or (init is not None and init.multipliers is not None)
    fam = _family(args, mech, uniform)
    res = best_response_dynamics(inst, mech, fam, init, args.max_rounds, args.epsilon)
    return {"converged": res.converged, "rounds": res.rounds, "bids": bids_to_dict(res.profile),
            "family": fam.kind}


def cmd_poa(args):
    inst, bids = _load_pair(args)
    mech = _mechanism(args)
    return poa_ratio(inst, mech, bids).to_dict()


def cmd_certify(args):
    res = bounds.certify_rfpa(args.alpha, args.eta, args.gamma, args.grid, args.uniform)
    return res.to_dict()


def cmd_qp(args):
    out = {"eta": args.eta, "alpha": args.alpha, "n": args.n,
           "poa_bound": bounds.qp_poa_bound(args.eta, args.alpha, args.n),
           "limit": 1.0 / args.eta + 1.0,
           "spend_lowerbound_per_value": bounds.qp_spend_lowerbound(1.0, args.eta, args.alpha, args.n),
           "bid_lowerbound_per_value": bounds.qp_local_optimality_bid_lb(1.0, args.eta, args.alpha)}
    return out


def cmd_replicate(args):
    only = [s.strip() for s in args.only.split(",")] if args.only else None
    rows = paperlab.replicate_all(seed=args.seed, threads=args.threads, only=only, scale=args.scale)
    table = [r.to_dict(args.timings) for r in rows]
    if args.format == "csv":
        return rows_to_csv(_plain(table))
    return {"seed": args.seed, "scale": args.scale, "all_passed": all(r.passed for r in rows),
            "rows": table}


def _sample_doc(s):
    if s is None:
        return None
    return {"index": s.index, "poa": s.poa, "ipoa": s.ipoa,
            "instance": instance_to_dict(s.instance), "bids": bids_to_dict(s.profile)}


def cmd_search(args):
    res = paperlab.worst_case_search(args.mechanism, args.n, args.q, args.samples, args.seed,
                                     args.alpha, args.threads)
    return {"mechanism": res.mechanism, "n": args.n, "q": args.q, "samples": res.samples,
            "seed": args.seed, "converged": res.converged, "best_poa": res.best_poa,
            "best_ipoa": res.best_ipoa, "poa_witness": _sample_doc(res.poa_witness),
            "ipoa_witness": _sample_doc(res.ipoa_witness), "violations": res.violations}


# -- parser ----------------------------------------------------------------------

def _positive_int(text):
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if k < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return k


def _finite(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not math.isfinite(x):
        raise argparse.ArgumentTypeError("must be finite")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--threads", type=_positive_int, default=None)

    mech = argparse.ArgumentParser(add_help=False)
    mech.add_argument("--mechanism", choices=("fpa", "rfpa", "qpfpa"), default="fpa")
    mech.add_argument("--alpha", type=_finite)
    mech.add_argument("--tie", default="lowest", help="lowest, highest or perm:i,j,...")
    mech.add_argument("--epsilon", type=_finite, default=None)
    mech.add_argument("--family", choices=("fpa_subset", "uniform_scan", "grid_per_query",
                                           "scale_all", "grid"))

    p = _Parser(prog="autobid", description="Equilibria and welfare benchmarks for auto-bidding auctions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("opt", parents=[common], help="optimal liquid welfare")
    o.add_argument("--instance", required=True)
    o.add_argument("--mode", choices=("fractional", "integral"), default="fractional")
    o.add_argument("--node-cap", type=_positive_int, default=10**8)
    o.set_defaults(fn=cmd_opt)

    eq = sub.add_parser("eq", help="equilibrium tools")
    eqs = eq.add_subparsers(dest="eq_command", required=True, parser_class=_Parser)
    v = eqs.add_parser("verify", parents=[common, mech])
    v.add_argument("--instance", required=True)
    v.add_argument("--bids", required=True)
    v.add_argument("--diagnose", action="store_true")
    v.set_defaults(fn=cmd_eq_verify)
    d = eqs.add_parser("dynamics", parents=[common, mech])
    d.add_argument("--instance", required=True)
    d.add_argument("--init")
    d.add_argument("--uniform", action="store_true")
    d.add_argument("--max-rounds", type=_positive_int, default=100)
    d.set_defaults(fn=cmd_eq_dynamics)
    g = eqs.add_parser("diagnose", parents=[common, mech])
    g.add_argument("--instance", required=True)
    g.add_argument("--bids", required=True)
    g.set_defaults(fn=cmd_eq_diagnose)

    a = sub.add_parser("poa", parents=[common, mech], help="Opt/LW and I-Opt/LW of a profile")
    a.add_argument("--instance", required=True)
    a.add_argument("--bids", required=True)
    a.set_defaults(fn=cmd_poa)

    b = sub.add_parser("bounds", help="closed-form certificates")
    bs = b.add_subparsers(dest="bounds_command", required=True, parser_class=_Parser)
    c = bs.add_parser("certify-rfpa", parents=[common])
    c.add_argument("--alpha", type=_finite, required=True)
    c.add_argument("--eta", type=_finite, required=True)
    c.add_argument("--gamma", type=_finite, default=None, help="defaults to 1 - eta")
    c.add_argument("--grid", type=_positive_int, default=10_000)
    c.add_argument("--uniform", action="store_true")
    c.set_defaults(fn=cmd_certify)
    q = bs.add_parser("qp", parents=[common])
    q.add_argument("--eta", type=_finite, required=True)
    q.add_argument("--alpha", type=_finite, required=True)
    q.add_argument("--n", type=_positive_int, required=True)
    q.set_defaults(fn=cmd_qp)

    r = sub.add_parser("replicate", parents=[common], help="run the replication table")
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--only", help="comma-separated row groups")
    r.add_argument("--scale", type=_finite, default=1.0, help="multiplier on random sample counts")
    r.add_argument("--timings", action="store_true", help="include runtime_ms (not reproducible)")
    r.set_defaults(fn=cmd_replicate)

    s = sub.add_parser("search", parents=[common], help="random search for bad equilibria")
    s.add_argument("--mechanism", choices=paperlab.MECHANISMS, default="fpa")
    s.add_argument("--alpha", type=_finite)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--q", type=_positive_int, required=True)
    s.add_argument("--samples", type=_positive_int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_search)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "scale", 1.0) is not None and getattr(args, "scale", 1.0) <= 0:
            raise ModelError("--scale must be positive")
        result = args.fn(args)
        _emit(args, result if isinstance(result, str) else dumps(result))
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimplexError, SearchBudgetExceeded) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
