"""Dense two-phase primal simplex for small standard-form LPs.

Solves  min c.x  subject to  A x = b, x >= 0  with Bland's rule, which is
all the robust-feasibility duals in this package need (a few dozen variables
at most).  No external solver dependency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_TOL = 1e-9


@dataclass(frozen=True)
class LpResult:
    status: str
    x: np.ndarray | None
    objective: float | None


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for r in range(tableau.shape[0]):
        if r != row and abs(tableau[r, col]) > 0.0:
            tableau[r] -= tableau[r, col] * tableau[row]
    basis[row] = col


def _simplex_core(tableau: np.ndarray, basis: np.ndarray, n_vars: int) -> str:
    """Run Bland-rule pivots on a tableau whose last row is the objective."""
    m = tableau.shape[0] - 1
    while True:
        cost = tableau[-1, :n_vars]
        entering = -1
        for j in range(n_vars):
            if cost[j] < -_TOL:
                entering = j
                break
        if entering < 0:
            return OPTIMAL
        ratios = []
        for i in range(m):
            a = tableau[i, entering]
            if a > _TOL:
                ratios.append((tableau[i, -1] / a, basis[i], i))
        if not ratios:
            return UNBOUNDED
        # Bland: smallest ratio, ties broken by smallest basis index.
        ratios.sort(key=lambda r: (r[0], r[1]))
        _pivot(tableau, basis, ratios[0][2], entering)


def solve_standard_lp(c, A, b) -> LpResult:
    """Minimize c.x subject to A x = b, x >= 0."""
    c = np.asarray(c, dtype=float).reshape(-1)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise ValueError("inconsistent LP dimensions")

    A = A.copy()
    b = b.copy()
    flip = b < 0.0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # Phase 1: artificial variables, minimize their sum.
    total = n + m
    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :n] = A
    tableau[:m, n:total] = np.eye(m)
    tableau[:m, -1] = b
    basis = np.arange(n, total)
    tableau[-1, n:total] = 1.0
    for i in range(m):
        tableau[-1] -= tableau[i]
    status = _simplex_core(tableau, basis, total)
    if status != OPTIMAL:
        # The phase-1 objective is bounded below by zero.
        raise RuntimeError("phase-1 simplex failed to terminate cleanly")
    # The objective row stores -z; a strictly positive artificial sum means
    # the equality system has no nonnegative solution.
    if tableau[-1, -1] < -1e-7:
        return LpResult(INFEASIBLE, None, None)

    # Drive any artificial variables that linger in the basis out of it.
    for i in range(m):
        if basis[i] >= n:
            pivot_col = -1
            for j in range(n):
                if abs(tableau[i, j]) > _TOL:
                    pivot_col = j
                    break
            if pivot_col >= 0:
                _pivot(tableau, basis, i, pivot_col)
    keep = [i for i in range(m) if basis[i] < n]
    rows = keep + [m]
    tableau = tableau[rows][:, list(range(n)) + [total]]
    basis = basis[keep]
    m = len(keep)

    # Phase 2: original objective expressed over the current basis.
    tableau[-1, :] = 0.0
    tableau[-1, :n] = c
    for i in range(m):
        tableau[-1] -= tableau[-1, basis[i]] * tableau[i]
    status = _simplex_core(tableau, basis, n)
    if status == UNBOUNDED:
        return LpResult(UNBOUNDED, None, None)
    x = np.zeros(n)
    for i in range(m):
        x[basis[i]] = tableau[i, -1]
    return LpResult(OPTIMAL, x, float(c @ x))
