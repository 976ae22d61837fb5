"""Dense two-phase primal simplex for small linear programs.

Solves  min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0.

Bland's rule throughout: the band constraints of the release-policy LP have
zero right-hand sides, so the bases are heavily degenerate and anti-cycling
matters more than pivot speed.  Problem sizes here stay under a few hundred
rows/columns.
"""

from __future__ import annotations

import numpy as np

_TOL = 1e-10


class SimplexError(RuntimeError):
    pass


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r] -= tab[r, col] * tab[row]
    basis[row] = col


def _run(tab: np.ndarray, basis: np.ndarray, cost: np.ndarray, ncols: int) -> float:
    """Optimize ``cost`` over the current tableau; returns the objective."""
    m = tab.shape[0]
    # reduced costs, kept as an explicit row for simplicity
    z = cost.astype(np.float64).copy()
    obj = 0.0
    for r in range(m):
        if cost[basis[r]] != 0.0:
            z -= cost[basis[r]] * tab[r, :ncols]
            obj -= cost[basis[r]] * tab[r, ncols]
    for _ in range(100_000):
        enter = -1
        for j in range(ncols):
            if z[j] < -_TOL:
                enter = j
                break
        if enter < 0:
            return -obj
        leave = -1
        best = np.inf
        for r in range(m):
            a = tab[r, enter]
            if a > _TOL:
                ratio = tab[r, ncols] / a
                if ratio < best - _TOL or (ratio < best + _TOL and (leave < 0 or basis[r] < basis[leave])):
                    best = ratio
                    leave = r
        if leave < 0:
            raise SimplexError("objective unbounded below")
        coeff = z[enter]
        _pivot(tab, basis, leave, enter)
        z -= coeff * tab[leave, :ncols]
        obj -= coeff * tab[leave, ncols]
    raise SimplexError("simplex iteration limit exceeded")


def solve_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None):
    """Returns (x, objective).  Raises SimplexError if infeasible/unbounded."""
    c = np.asarray(c, dtype=np.float64)
    nx = c.size
    rows = []
    rhs = []
    kinds = []  # "eq" or "ub"
    if A_eq is not None:
        for row, b in zip(np.atleast_2d(A_eq), np.atleast_1d(b_eq)):
            rows.append(np.asarray(row, dtype=np.float64))
            rhs.append(float(b))
            kinds.append("eq")
    if A_ub is not None:
        for row, b in zip(np.atleast_2d(A_ub), np.atleast_1d(b_ub)):
            rows.append(np.asarray(row, dtype=np.float64))
            rhs.append(float(b))
            kinds.append("ub")
    m = len(rows)
    nslack = sum(1 for k in kinds if k == "ub")

    ncols = nx + nslack + m  # structural + slack + one artificial per row
    tab = np.zeros((m, ncols + 1))
    basis = np.empty(m, dtype=np.int64)
    si = 0
    for r in range(m):
        row, b = rows[r], rhs[r]
        if b < 0.0:
            row, b = -row, -b
            flip = -1.0
        else:
            flip = 1.0
        tab[r, :nx] = row
        if kinds[r] == "ub":
            tab[r, nx + si] = flip
            si += 1
        tab[r, ncols] = b
        art = nx + nslack + r
        tab[r, art] = 1.0
        basis[r] = art

    # phase 1: drive the artificials to zero
    cost1 = np.zeros(ncols)
    cost1[nx + nslack:] = 1.0
    infeas = _run(tab, basis, cost1, ncols)
    if infeas > 1e-7:
        raise SimplexError(f"infeasible (phase-1 objective {infeas:g})")
    # pivot lingering artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= nx + nslack:
            for j in range(nx + nslack):
                if abs(tab[r, j]) > _TOL:
                    _pivot(tab, basis, r, j)
                    break
    # forbid artificials from re-entering
    tab[:, nx + nslack:ncols] = 0.0

    cost2 = np.zeros(ncols)
    cost2[:nx] = c
    obj = _run(tab, basis, cost2, ncols)
    x = np.zeros(ncols)
    for r in range(m):
        x[basis[r]] = tab[r, ncols]
    return x[:nx], obj
