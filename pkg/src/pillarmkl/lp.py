"""Dense two-phase tableau simplex with Bland's rule.

Problems are tiny here (the MKL master has one variable per kernel plus
theta, and one row per cut), so the tableau is a plain numpy array and
every pivot is a rank-one update.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedProblem

PIVOT_EPS = 1e-10
COST_EPS = 1e-11
MAX_PIVOTS = 100_000


@dataclass
class LpProblem:
    """maximize ``objective . v`` s.t. ``ineq`` rows (``row . v <= rhs``),
    ``eq`` rows (``row . v == rhs``) and per-variable ``bounds``.

    A bound of ``None`` means unbounded on that side; ``bounds=None``
    defaults every variable to ``[0, None)``.
    """
    objective: list
    ineq: list = field(default_factory=list)
    eq: list = field(default_factory=list)
    bounds: list | None = None


@dataclass
class LpSolution:
    status: str
    v: np.ndarray
    objective_value: float
    iterations: int


def _rows(pairs, n, what):
    if len(pairs) == 0:
        return np.zeros((0, n)), np.zeros(0)
    if any(len(r) != n for r, _ in pairs):
        raise MalformedProblem(f"{what} row length differs from objective length {n}")
    A = np.array([np.asarray(r, dtype=np.float64) for r, _ in pairs])
    b = np.array([float(rhs) for _, rhs in pairs])
    return A, b


def _bound(v):
    if v is None:
        return None
    v = float(v)
    if np.isinf(v):
        return None
    if np.isnan(v):
        raise MalformedProblem("NaN bound")
    return v


def _standardize(p: LpProblem):
    """Map to ``max c'u, A u <= b, E u = f, u >= 0`` via ``v = T u + o``."""
    c = np.asarray(p.objective, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise MalformedProblem("objective must be a non-empty vector")
    n = c.size
    A, b = _rows(p.ineq, n, "inequality")
    E, f = _rows(p.eq, n, "equality")
    if not all(np.all(np.isfinite(a)) for a in (c, A, b, E, f)):
        raise MalformedProblem("non-finite coefficient")
    bounds = p.bounds if p.bounds is not None else [(0.0, None)] * n
    if len(bounds) != n:
        raise MalformedProblem(f"{len(bounds)} bounds for {n} variables")

    cols, offset, extra = [], np.zeros(n), []
    for j, (lo, hi) in enumerate(bounds):
        lo, hi = _bound(lo), _bound(hi)
        if lo is not None and hi is not None and hi < lo:
            raise MalformedProblem(f"variable {j}: upper bound below lower bound")
        e = np.zeros(n)
        if lo is not None:
            e[j] = 1.0
            offset[j] = lo
            cols.append(e)
            if hi is not None:
                extra.append((len(cols) - 1, hi - lo))
        elif hi is not None:
            e[j] = -1.0
            offset[j] = hi
            cols.append(e)
        else:
            e[j] = 1.0
            cols.append(e)
            cols.append(-e)
    T = np.column_stack(cols)
    A_u, b_u = A @ T, b - A @ offset
    E_u, f_u = E @ T, f - E @ offset
    if extra:
        rows = np.zeros((len(extra), T.shape[1]))
        for r, (col, cap) in enumerate(extra):
            rows[r, col] = 1.0
        A_u = np.vstack([A_u, rows])
        b_u = np.concatenate([b_u, [cap for _, cap in extra]])
    return c @ T, A_u, b_u, E_u, f_u, T, offset, c


def _dump(tab, basis, out):
    print(f"basis={basis.tolist()}", file=out)
    print(np.array2string(tab, precision=6, max_line_width=200), file=out)


def _pivot(tab, basis, r, j):
    tab[r] /= tab[r, j]
    col = tab[:, j].copy()
    col[r] = 0.0
    tab -= np.outer(col, tab[r])
    basis[r] = j


def _run(tab, basis, allowed, debug, count):
    """Bland's-rule primal simplex on a tableau whose last row holds reduced
    costs (negative entry = improving). Returns ``(status, pivots)``."""
    m = tab.shape[0] - 1
    while True:
        if debug is not None:
            _dump(tab, basis, debug)
        cost = tab[-1, :-1]
        enter = -1
        for j in np.flatnonzero(allowed):
            if cost[j] < -COST_EPS:
                enter = j
                break
        if enter < 0:
            return "optimal", count
        colj = tab[:m, enter]
        cand = np.flatnonzero(colj > PIVOT_EPS)
        if cand.size == 0:
            return "unbounded", count
        ratios = tab[cand, -1] / colj[cand]
        best = ratios.min()
        ties = cand[ratios <= best + 1e-12 * max(1.0, abs(best))]
        leave = ties[np.argmin(basis[ties])]
        _pivot(tab, basis, leave, enter)
        count += 1
        if count > MAX_PIVOTS:
            raise RuntimeError("simplex pivot limit exceeded")


def solve_lp(p: LpProblem, debug=None) -> LpSolution:
    """Two-phase simplex. ``debug`` may be a writable text stream (or ``True``
    for stderr) that receives every tableau."""
    if debug is True:
        debug = sys.stderr
    elif debug is False:
        debug = None
    c_u, A, b, E, f, T, offset, c = _standardize(p)
    n_u = c_u.size
    m_in, m_eq = A.shape[0], E.shape[0]
    m = m_in + m_eq

    # columns: u | slacks | artificials | rhs
    n_s = m_in
    art_rows = [i for i in range(m_in) if b[i] < 0] + list(range(m_in, m))
    n_a = len(art_rows)
    N = n_u + n_s + n_a
    tab = np.zeros((m + 1, N + 1))
    basis = np.zeros(m, dtype=np.int64)
    tab[:m_in, :n_u] = A
    tab[:m_in, n_u:n_u + n_s] = np.eye(m_in)
    tab[:m_in, -1] = b
    tab[m_in:m, :n_u] = E
    tab[m_in:m, -1] = f
    for i in range(m):
        if tab[i, -1] < 0:
            tab[i] *= -1.0
    for i in range(m_in):
        basis[i] = n_u + i
    for a, i in enumerate(art_rows):
        tab[i, n_u + n_s + a] = 1.0
        basis[i] = n_u + n_s + a

    pivots = 0
    if n_a:
        tab[-1, n_u + n_s:N] = 1.0
        for i in art_rows:
            tab[-1] -= tab[i]
        allowed = np.ones(N, dtype=bool)
        _, pivots = _run(tab, basis, allowed, debug, pivots)
        scale = max(1.0, float(np.abs(np.concatenate([b, f])).max(initial=0.0)))
        if -tab[-1, -1] > 1e-9 * scale:
            return LpSolution("infeasible", np.full(c.size, np.nan), float("nan"), pivots)
        # drive zero-level artificials out of the basis, dropping redundant rows
        keep = []
        for r in range(m):
            if basis[r] >= n_u + n_s:
                cand = np.flatnonzero(np.abs(tab[r, :n_u + n_s]) > PIVOT_EPS)
                if cand.size:
                    _pivot(tab, basis, r, int(cand[0]))
                    pivots += 1
                    keep.append(r)
            else:
                keep.append(r)
        tab = np.vstack([tab[keep], tab[-1:]])
        basis = basis[keep]
        tab = np.delete(tab, np.s_[n_u + n_s:N], axis=1)
        N = n_u + n_s

    tab[-1] = 0.0
    tab[-1, :n_u] = -c_u
    for r, j in enumerate(basis):
        if tab[-1, j] != 0.0:
            tab[-1] -= tab[-1, j] * tab[r]
    status, pivots = _run(tab, basis, np.ones(N, dtype=bool), debug, pivots)
    if status == "unbounded":
        return LpSolution("unbounded", np.full(c.size, np.nan), float("inf"), pivots)
    u = np.zeros(N)
    u[basis] = tab[:-1, -1]
    v = T @ u[:n_u] + offset
    return LpSolution("optimal", v, float(c @ v), pivots)
