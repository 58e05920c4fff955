"""Dense tableau simplex for  max c.x  s.t.  A x <= b, x >= 0  with b >= 0.

The slack basis is feasible at the origin, so a single phase suffices.
Pivoting follows Bland's rule (smallest entering index, smallest leaving
basis index among ratio ties), which rules out cycling on the heavily
degenerate liquid-welfare programs this package builds.
"""

from dataclasses import dataclass

import numpy as np


class SimplexError(RuntimeError):
    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} pivots)")
        self.iterations = iterations


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


def maximize(c, A, b, tol=1e-9, max_iter=100_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise ValueError("inconsistent LP dimensions")
    if (b < 0).any():
        raise ValueError("right-hand side must be nonnegative for the slack basis")

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = np.arange(n, n + m)

    it = 0
    while True:
        reduced = T[m, :-1]
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            break
        if it >= max_iter:
            raise SimplexError("iteration limit reached", it)
        e = entering[0]
        col = T[:m, e]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            raise SimplexError("objective is unbounded", it)
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best + tol * (1.0 + abs(best))]
        r = tied[np.argmin(basis[tied])]

        T[r] /= T[r, e]
        others = np.flatnonzero(T[:, e])
        others = others[others != r]
        T[others] -= np.outer(T[others, e], T[r])
        T[np.abs(T) < 1e-15] = 0.0
        basis[r] = e
        it += 1

    x = np.zeros(n + m)
    x[basis] = T[:m, -1]
    if (x < -1e-7).any():
        raise SimplexError("primal solution lost feasibility", it)
    x = np.maximum(x[:n], 0.0)
    return LPResult(x=x, objective=float(T[m, -1]), iterations=it)
