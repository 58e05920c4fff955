"""Core domain types: instances, bid profiles, allocations and outcomes.

Every type here is immutable once built; the underlying numpy arrays are
marked read-only.
"""

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import DEFAULT


class ModelError(ValueError):
    """Raised for malformed instances, profiles, or allocations."""


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    budgets: np.ndarray
    values: np.ndarray

    def __init__(self, budgets, values):
        b = np.asarray(budgets, dtype=float).reshape(-1)
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise ModelError(f"values must be a matrix, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ModelError("need at least one bidder and one query")
        if b.shape[0] != v.shape[0]:
            raise ModelError(f"{b.shape[0]} budgets for {v.shape[0]} bidders")
        if np.isnan(v).any() or np.isinf(v).any():
            raise ModelError("values must be finite")
        if (v < 0).any():
            raise ModelError("values must be nonnegative")
        if np.isnan(b).any() or (b <= 0).any():
            raise ModelError("budgets must be positive or +inf")
        object.__setattr__(self, "budgets", _frozen(b))
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_bidders(self) -> int:
        return self.values.shape[0]

    @property
    def num_queries(self) -> int:
        return self.values.shape[1]

    @property
    def welfare_caps(self) -> np.ndarray:
        """min(B_i, sum_j v_ij) per bidder: the most LW bidder i can ever add."""
        return np.minimum(self.budgets, self.values.sum(axis=1))

    def default_epsilon(self, tol=DEFAULT) -> float:
        return tol.eps_rel * float(self.welfare_caps.sum())

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (np.array_equal(self.budgets, other.budgets)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"Instance(budgets={self.budgets.tolist()}, values={self.values.tolist()})"


@dataclass(frozen=True, eq=False)
class BidProfile:
    """Bids b_ij. In uniform mode the matrix is derived from multipliers."""

    bids: np.ndarray
    multipliers: Optional[np.ndarray] = None

    def __init__(self, bids, multipliers=None):
        b = np.asarray(bids, dtype=float)
        if b.ndim != 2:
            raise ModelError("bids must be a matrix")
        if np.isnan(b).any() or np.isinf(b).any() or (b < 0).any():
            raise ModelError("bids must be finite and nonnegative")
        object.__setattr__(self, "bids", _frozen(b))
        if multipliers is not None:
            m = np.asarray(multipliers, dtype=float).reshape(-1)
            if m.shape[0] != b.shape[0]:
                raise ModelError("one multiplier per bidder required")
            if np.isnan(m).any() or np.isinf(m).any() or (m < 0).any():
                raise ModelError("multipliers must be finite and nonnegative")
            multipliers = _frozen(m)
        object.__setattr__(self, "multipliers", multipliers)

    @classmethod
    def per_query(cls, bids) -> "BidProfile":
        return cls(bids)

    @classmethod
    def uniform(cls, instance: Instance, multipliers) -> "BidProfile":
        m = np.asarray(multipliers, dtype=float).reshape(-1)
        if m.shape[0] != instance.num_bidders:
            raise ModelError("one multiplier per bidder required")
        return cls(m[:, None] * instance.values, m)

    @property
    def mode(self) -> str:
        return "per_query" if self.multipliers is None else "uniform"

    def check_against(self, instance: Instance):
        if self.bids.shape != instance.values.shape:
            raise ModelError(
                f"bid matrix {self.bids.shape} does not match instance {instance.values.shape}")
        if self.multipliers is not None:
            derived = self.multipliers[:, None] * instance.values
            if not np.allclose(derived, self.bids, rtol=0.0, atol=1e-12):
                raise ModelError("uniform bids differ from multiplier * values")

    def with_bidder(self, i: int, row=None, multiplier=None, instance=None) -> "BidProfile":
        """Copy with bidder i's bids replaced (by a row or a uniform multiplier)."""
        bids = self.bids.copy()
        if multiplier is not None:
            if self.multipliers is None or instance is None:
                raise ModelError("multiplier update needs a uniform profile and its instance")
            m = self.multipliers.copy()
            m[i] = multiplier
            bids[i] = multiplier * instance.values[i]
            return BidProfile(bids, m)
        bids[i] = row
        return BidProfile(bids)

    def __eq__(self, other):
        if not isinstance(other, BidProfile):
            return NotImplemented
        if (self.multipliers is None) != (other.multipliers is None):
            return False
        if self.multipliers is not None and not np.array_equal(self.multipliers, other.multipliers):
            return False
        return np.array_equal(self.bids, other.bids)


@dataclass(frozen=True, eq=False)
class Allocation:
    pi: np.ndarray

    def __init__(self, pi, tol=DEFAULT):
        p = np.asarray(pi, dtype=float)
        if p.ndim != 2:
            raise ModelError("allocation must be a matrix")
        if np.isnan(p).any() or (p < -tol.abs_tol).any() or (p > 1 + tol.abs_tol).any():
            raise ModelError("allocation entries must lie in [0, 1]")
        if (p.sum(axis=0) > 1 + tol.abs_tol).any():
            raise ModelError("allocation over-assigns a query")
        object.__setattr__(self, "pi", _frozen(p))

    @classmethod
    def zeros(cls, instance: Instance) -> "Allocation":
        return cls(np.zeros_like(instance.values))


@dataclass(frozen=True, eq=False)
class Outcome:
    allocation: Allocation
    expected_payment: np.ndarray

    def __init__(self, allocation: Allocation, expected_payment):
        pay = np.asarray(expected_payment, dtype=float)
        if pay.shape != allocation.pi.shape:
            raise ModelError("payment matrix shape mismatch")
        if (pay < 0).any():
            raise ModelError("expected payments must be nonnegative")
        if (pay[allocation.pi == 0] != 0).any():
            raise ModelError("a bidder that never wins cannot pay")
        object.__setattr__(self, "allocation", allocation)
        object.__setattr__(self, "expected_payment", _frozen(pay))

    @property
    def pi(self) -> np.ndarray:
        return self.allocation.pi

    def spend_of_query(self, j: int) -> float:
        return float(self.expected_payment[:, j].sum())

    def spend_of_bidder(self, i: int) -> float:
        return float(self.expected_payment[i].sum())

    def value_of_bidder(self, instance: Instance, i: int) -> float:
        return float(self.allocation.pi[i] @ instance.values[i])

    # vectorised forms
    def query_spend(self) -> np.ndarray:
        return self.expected_payment.sum(axis=0)

    def bidder_spend(self) -> np.ndarray:
        return self.expected_payment.sum(axis=1)

    def bidder_value(self, instance: Instance) -> np.ndarray:
        return (self.allocation.pi * instance.values).sum(axis=1)


def _check_dims(instance: Instance, allocation: Allocation):
    if allocation.pi.shape != instance.values.shape:
        raise ModelError(
            f"allocation {allocation.pi.shape} does not match instance {instance.values.shape}")


def bidder_welfare(instance: Instance, allocation: Allocation) -> np.ndarray:
    """Per-bidder liquid welfare min(B_i, sum_j pi_ij v_ij)."""
    _check_dims(instance, allocation)
    return np.minimum(instance.budgets, (allocation.pi * instance.values).sum(axis=1))


def liquid_welfare(instance: Instance, allocation: Allocation) -> float:
    return float(bidder_welfare(instance, allocation).sum())


def liquid_welfare_of_subset(instance: Instance, allocation: Allocation,
                             bidders: Iterable[int]) -> float:
    idx = list(bidders)
    for i in idx:
        if not (0 <= i < instance.num_bidders):
            raise ModelError(f"bidder index {i} out of range")
    if not idx:
        return 0.0
    return float(bidder_welfare(instance, allocation)[idx].sum())


# -- JSON ------------------------------------------------------------------

def _budget_from_json(x):
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise ModelError(f"budget string must be 'inf', got {x!r}")
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ModelError(f"non-numeric budget {x!r}")
    return float(x)


def _number(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ModelError(f"non-numeric {what} {x!r}")
    if not math.isfinite(x):
        raise ModelError(f"{what} must be finite")
    return float(x)


def _matrix(rows, what):
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ModelError(f"{what} must be a non-empty list of lists")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ModelError(f"{what} rows have unequal length")
    return [[_number(x, what[:-1] if what.endswith("s") else what) for x in r] for r in rows]


def instance_from_dict(doc) -> Instance:
    if not isinstance(doc, dict):
        raise ModelError("instance document must be an object")
    missing = {"budgets", "values"} - set(doc)
    if missing:
        raise ModelError(f"instance document missing {sorted(missing)}")
    if not isinstance(doc["budgets"], list):
        raise ModelError("budgets must be a list")
    budgets = [_budget_from_json(x) for x in doc["budgets"]]
    values = _matrix(doc["values"], "values")
    return Instance(budgets, values)


def instance_to_dict(instance: Instance) -> dict:
    return {
        "budgets": ["inf" if math.isinf(b) else float(b) for b in instance.budgets],
        "values": instance.values.tolist(),
    }


def load_instance(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    return instance_from_dict(doc)


def save_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), sort_keys=True)


def bids_from_dict(doc, instance: Instance) -> BidProfile:
    if not isinstance(doc, dict) or "mode" not in doc:
        raise ModelError("bid document must be an object with a 'mode'")
    mode = doc["mode"]
    if mode == "per_query":
        profile = BidProfile(_matrix(doc.get("bids"), "bids"))
    elif mode == "uniform":
        mults = doc.get("multipliers")
        if not isinstance(mults, list):
            raise ModelError("uniform profile needs a 'multipliers' list")
        profile = BidProfile.uniform(instance, [_number(m, "multiplier") for m in mults])
    else:
        raise ModelError(f"unknown bid mode {mode!r}")
    profile.check_against(instance)
    return profile


def bids_to_dict(profile: BidProfile) -> dict:
    if profile.multipliers is not None:
        return {"mode": "uniform", "multipliers": profile.multipliers.tolist()}
    return {"mode": "per_query", "bids": profile.bids.tolist()}


def load_bids(text: str, instance: Instance) -> BidProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    return bids_from_dict(doc, instance)


def save_bids(profile: BidProfile) -> str:
    return json.dumps(bids_to_dict(profile), sort_keys=True)


def zero_profile(instance: Instance, uniform: bool = False) -> BidProfile:
    if uniform:
        return BidProfile.uniform(instance, np.zeros(instance.num_bidders))
    return BidProfile(np.zeros_like(instance.values))


__all__: Sequence[str] = [
    "Allocation", "BidProfile", "Instance", "ModelError", "Outcome",
    "bidder_welfare", "bids_from_dict", "bids_to_dict", "instance_from_dict",
    "instance_to_dict", "liquid_welfare", "liquid_welfare_of_subset",
    "load_bids", "load_instance", "save_bids", "save_instance", "zero_profile",
]
