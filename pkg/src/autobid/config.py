"""Numerical tolerances shared by every module.

All welfare and constraint comparisons go through one ``Tolerances`` record so
tests can audit exactly which slack is applied where.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # welfare / allocation comparisons
    abs_tol: float = 1e-9
    # Spend(i) <= min(B_i, V_i) + feas_abs
    feas_abs: float = 1e-9
    # outbid margin: delta(price) = margin_rel * (1 + price)
    margin_rel: float = 1e-6
    # default epsilon = eps_rel * sum_i min(B_i, sum_j v_ij)
    eps_rel: float = 1e-6
    # simplex pivot tolerance
    pivot_tol: float = 1e-9

    def margin(self, price):
        return self.margin_rel * (1.0 + price)


DEFAULT = Tolerances()
