"""Closed-form welfare certificates for the randomized first-price rules and
numeric checks of their constants."""

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelError


class BoundsDomainError(ModelError):
    pass


def _check_alpha(alpha):
    if not alpha > 1:
        raise BoundsDomainError(f"alpha must exceed 1, got {alpha!r}")


def _check_beta(beta, alpha):
    _check_alpha(alpha)
    if not (1.0 / alpha < beta < alpha):
        raise BoundsDomainError(f"beta {beta!r} outside (1/alpha, alpha)")


def _m(beta, alpha):
    return 0.5 * (1.0 + np.log(beta) / np.log(alpha))


def m_beta(beta, alpha):
    """Win probability of the higher bid at bid ratio beta."""
    _check_beta(beta, alpha)
    return float(_m(beta, alpha))


def _s_nonuniform(beta, alpha):
    la, lb = np.log(alpha), np.log(beta)
    d = 1.0 + la + lb
    return (1.0 + lb / la) / (2.0 * d) + (1.0 - lb / la) / (2.0 * beta * d)


def _s_uniform(beta, alpha):
    m = _m(beta, alpha)
    return m + (1.0 - m) / beta


def s_beta_nonuniform(beta, alpha):
    _check_beta(beta, alpha)
    return float(_s_nonuniform(beta, alpha))


def s_beta_uniform(beta, alpha):
    _check_beta(beta, alpha)
    return float(_s_uniform(beta, alpha))


@dataclass(frozen=True)
class CertificateResult:
    value: float
    argmin_beta: float
    grid_size: int
    refined: bool
    inner_min: float
    alpha: float
    eta: float
    gamma: float
    uniform: bool
    gamma_assumed: bool

    def to_dict(self) -> dict:
        return {
            "value": self.value, "argmin_beta": self.argmin_beta, "grid_size": self.grid_size,
            "refined": self.refined, "inner_min": self.inner_min, "alpha": self.alpha,
            "eta": self.eta, "gamma": self.gamma, "uniform": self.uniform,
            "gamma_assumed": self.gamma_assumed,
        }


def _golden_min(f, lo, hi, tol=1e-10):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    return x, f(x)


def certify_rfpa(alpha, eta, gamma=None, grid: int = 10_000, uniform: bool = False,
                 refine: bool = True) -> CertificateResult:
    """min{gamma, alpha*eta, min_beta eta*m_beta + gamma*s_beta} over beta in [1/alpha, alpha].

    The grid is uniform in ln(beta); golden-section search then refines
    around the best grid cell.  With ``gamma=None`` we take gamma = 1 - eta
    and record that it was assumed.
    """
    _check_alpha(alpha)
    assumed = gamma is None
    gamma = 1.0 - eta if assumed else float(gamma)
    if eta < 0 or gamma < 0:
        raise BoundsDomainError("eta and gamma must be nonnegative")
    if grid < 3:
        raise BoundsDomainError("grid needs at least three points")
    s = _s_uniform if uniform else _s_nonuniform
    la = math.log(alpha)

    def h(t):
        beta = np.exp(t)
        return eta * _m(beta, alpha) + gamma * s(beta, alpha)

    ts = np.linspace(-la, la, grid)
    vals = h(ts)
    k = int(np.argmin(vals))
    t_best, inner = float(ts[k]), float(vals[k])
    if refine:
        lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, grid - 1)]
        t_ref, v_ref = _golden_min(lambda t: float(h(t)), lo, hi)
        if v_ref < inner:
            t_best, inner = t_ref, v_ref
    value = min(gamma, alpha * eta, inner)
    return CertificateResult(value=float(value), argmin_beta=float(math.exp(t_best)), grid_size=grid,
                             refined=refine, inner_min=inner, alpha=float(alpha), eta=float(eta),
                             gamma=float(gamma), uniform=uniform, gamma_assumed=assumed)


# -- quasi-proportional ------------------------------------------------------

def _check_qp(eta, alpha, n=None):
    if not (0.0 < eta < 1.0):
        raise BoundsDomainError(f"eta must lie in (0, 1), got {eta!r}")
    if not alpha >= 1:
        raise BoundsDomainError(f"alpha must be at least 1, got {alpha!r}")
    if n is not None and n < 2:
        raise BoundsDomainError("need at least two bidders")


def qp_spend_lowerbound(v, eta, alpha, n):
    """Spend on a query a bidder with value v wins with probability at most eta."""
    _check_qp(eta, alpha, n)
    return float(v * alpha * (1.0 - eta) / ((n * eta) ** (1.0 / alpha) * (alpha - alpha * eta + 1.0)))


def qp_poa_bound(eta, alpha, n):
    _check_qp(eta, alpha, n)
    return float(1.0 / eta + (n * eta) ** (1.0 / alpha) * (alpha - alpha * eta + 1.0) / (alpha * (1.0 - eta)))


def qp_local_optimality_bid_lb(v, eta, alpha):
    """First-order lower bound on a locally optimal bid winning w.p. <= eta."""
    _check_qp(eta, alpha)
    if v < 0:
        raise BoundsDomainError("value must be nonnegative")
    return float(v * alpha * (1.0 / eta - 1.0) / (alpha / eta - alpha + 1.0 / eta))


def qp_stationary_bid(v, K, alpha, iters: int = 200):
    """Bid b in (0, v) with d/db [(v - b) b^a / (b^a + K)] = 0, by bisection.

    The condition reduces to g(b) = b^(a+1) + K(a+1) b - K a v = 0, which is
    increasing in b with g(0) < 0 < g(v) whenever K > 0 and v > 0.
    """
    if not alpha >= 1:
        raise BoundsDomainError("alpha must be at least 1")
    if K < 0 or v < 0:
        raise BoundsDomainError("K and v must be nonnegative")

    def g(b):
        return b ** (alpha + 1.0) + K * (alpha + 1.0) * b - K * alpha * v

    lo, hi = 0.0, float(v)
    if not (g(lo) < 0.0 < g(hi)):
        raise BoundsDomainError("stationary-bid bisection does not bracket a root")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)
