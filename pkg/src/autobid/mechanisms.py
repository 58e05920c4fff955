"""Allocation and payment rules: first-price, two-bidder randomized
first-price, and quasi-proportional first-price.

In all three the winner pays its own bid, so the expected payment of bidder
i on query j is pi_ij * b_ij.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .model import Allocation, BidProfile, Instance, ModelError, Outcome


class UnsupportedConfiguration(ModelError):
    pass


@dataclass(frozen=True)
class TieBreak:
    """Deterministic tie-breaking among equal highest bids.

    ``rule`` is "lowest", "highest" or "permutation"; for a permutation,
    ``order`` lists bidders from most to least favoured.
    """

    rule: str = "lowest"
    order: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.rule not in ("lowest", "highest", "permutation"):
            raise ModelError(f"unknown tie-break rule {self.rule!r}")
        if self.rule == "permutation":
            object.__setattr__(self, "order", tuple(int(i) for i in self.order))
            if sorted(self.order) != list(range(len(self.order))):
                raise ModelError("permutation order must be a bijection on bidder indices")

    @classmethod
    def parse(cls, text: str) -> "TieBreak":
        text = text.strip().lower()
        if text.startswith("perm:"):
            return cls("permutation", tuple(int(x) for x in text[5:].split(",")))
        return cls(text)

    def ranks(self, n: int) -> np.ndarray:
        """rank[i]: lower rank wins ties."""
        if self.rule == "lowest":
            return np.arange(n)
        if self.rule == "highest":
            return np.arange(n)[::-1].copy()
        if len(self.order) != n:
            raise ModelError(f"permutation covers {len(self.order)} bidders, instance has {n}")
        rank = np.empty(n, dtype=int)
        rank[list(self.order)] = np.arange(n)
        return rank

    def to_text(self) -> str:
        if self.rule == "permutation":
            return "perm:" + ",".join(str(i) for i in self.order)
        return self.rule


@dataclass(frozen=True)
class MechanismSpec:
    kind: str = "fpa"
    alpha: float = 1.0
    tie: TieBreak = field(default_factory=TieBreak)

    def __post_init__(self):
        if self.kind not in ("fpa", "rfpa", "qpfpa"):
            raise ModelError(f"unknown mechanism {self.kind!r}")
        if self.kind == "rfpa" and not self.alpha > 1:
            raise ModelError("rFPA needs alpha > 1")
        if self.kind == "qpfpa" and not self.alpha >= 1:
            raise ModelError("quasi-proportional FPA needs alpha >= 1")

    @classmethod
    def fpa(cls, tie: Optional[TieBreak] = None) -> "MechanismSpec":
        return cls("fpa", 1.0, tie or TieBreak())

    @classmethod
    def rfpa(cls, alpha: float) -> "MechanismSpec":
        return cls("rfpa", float(alpha))

    @classmethod
    def qpfpa(cls, alpha: float) -> "MechanismSpec":
        return cls("qpfpa", float(alpha))

    @property
    def deterministic(self) -> bool:
        return self.kind == "fpa"

    def check_instance(self, instance: Instance):
        if self.kind == "rfpa" and instance.num_bidders != 2:
            raise UnsupportedConfiguration("rFPA is defined for exactly two bidders")

    def allocate(self, instance: Instance, bids: BidProfile) -> Outcome:
        if self.kind == "fpa":
            return fpa_allocate(instance, bids, self.tie)
        if self.kind == "rfpa":
            return rfpa_allocate(instance, bids, self.alpha)
        return qpfpa_allocate(instance, bids, self.alpha)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "fpa":
            d["tie"] = self.tie.to_text()
        else:
            d["alpha"] = self.alpha
        return d


def _matrix(instance: Instance, bids) -> np.ndarray:
    b = bids.bids if isinstance(bids, BidProfile) else np.asarray(bids, dtype=float)
    if b.shape != instance.values.shape:
        raise ModelError(f"bid matrix {b.shape} does not match instance {instance.values.shape}")
    return b


def _outcome(pi, b) -> Outcome:
    return Outcome(Allocation(pi), pi * b)


def fpa_winners(b: np.ndarray, tie: TieBreak) -> np.ndarray:
    """Winner index per query, -1 when every bid is zero."""
    n, q = b.shape
    rank = tie.ranks(n)
    top = b.max(axis=0)
    # among bidders at the max, pick the lowest rank
    key = np.where(b == top, rank[:, None], n)
    winners = key.argmin(axis=0)
    winners[top <= 0] = -1
    return winners


def fpa_allocate(instance: Instance, bids, tie: TieBreak = TieBreak()) -> Outcome:
    b = _matrix(instance, bids)
    winners = fpa_winners(b, tie)
    pi = np.zeros_like(b)
    cols = np.flatnonzero(winners >= 0)
    pi[winners[cols], cols] = 1.0
    return _outcome(pi, b)


def rfpa_win_probability(b_high: float, b_low: float, alpha: float) -> float:
    """Probability that the higher of two bids wins; requires b_high >= b_low."""
    if b_low <= 0 or b_high >= alpha * b_low:
        return 1.0
    return 0.5 * (1.0 + np.log(b_high / b_low) / np.log(alpha))


def rfpa_allocate(instance: Instance, bids, alpha: float) -> Outcome:
    if instance.num_bidders != 2:
        raise UnsupportedConfiguration("rFPA is defined for exactly two bidders")
    if not alpha > 1:
        raise ModelError("rFPA needs alpha > 1")
    b = _matrix(instance, bids)
    pi = np.zeros_like(b)
    for j in range(b.shape[1]):
        b0, b1 = b[0, j], b[1, j]
        if b0 <= 0 and b1 <= 0:
            continue
        hi = 0 if b0 >= b1 else 1
        p = rfpa_win_probability(b[hi, j], b[1 - hi, j], alpha)
        pi[hi, j] = p
        pi[1 - hi, j] = 1.0 - p
    return _outcome(pi, b)


def qpfpa_probabilities(col: np.ndarray, alpha: float) -> np.ndarray:
    """b_i^alpha / sum_k b_k^alpha for one query, evaluated in log space."""
    pos = col > 0
    out = np.zeros_like(col, dtype=float)
    if not pos.any():
        return out
    logs = alpha * np.log(col[pos])
    logs -= logs.max()
    w = np.exp(logs)
    out[pos] = w / w.sum()
    return out


def qpfpa_allocate(instance: Instance, bids, alpha: float) -> Outcome:
    if not alpha >= 1:
        raise ModelError("quasi-proportional FPA needs alpha >= 1")
    b = _matrix(instance, bids)
    pi = np.column_stack([qpfpa_probabilities(b[:, j], alpha) for j in range(b.shape[1])])
    return _outcome(pi, b)


def allocate(mechanism: MechanismSpec, instance: Instance, bids) -> Outcome:
    return mechanism.allocate(instance, bids)
