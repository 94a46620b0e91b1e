"""Ranked assignment: Murty's k-best solutions of a rectangular assignment problem.

Every row must be assigned to a distinct column. Infeasible pairs carry
``+inf`` cost. The optimal single assignment is delegated to
:func:`scipy.optimize.linear_sum_assignment`; the ranking (Lawler's partition
of the solution space) is done here.
"""
from __future__ import annotations

import heapq
import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment


def _solve(cost: np.ndarray):
    """Optimal assignment of every row; ``None`` if infeasible."""
    m = cost.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    if m > cost.shape[1]:
        return None
    finite = np.isfinite(cost)
    if not finite.any(axis=1).all():
        return None
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        return None
    total = cost[rows, cols].sum()
    if not np.isfinite(total):
        return None
    return cols.astype(np.int64), float(total)


def _forced_rows(cost: np.ndarray) -> np.ndarray:
    """Rows whose only feasible column is feasible for no other row.

    Such rows take the same column in every feasible assignment, so they can
    be removed from the ranking without changing it.
    """
    finite = np.isfinite(cost)
    row_count = finite.sum(axis=1)
    col_count = finite.sum(axis=0)
    single = np.flatnonzero(row_count == 1)
    if single.size == 0:
        return single
    cols = finite[single].argmax(axis=1)
    return single[col_count[cols] == 1]


def murty_kbest(cost, k: int) -> list[tuple[tuple[int, ...], float]]:
    """The ``k`` lowest-cost assignments in ascending order of cost.

    Parameters
    ----------
    cost : (m, n) array_like
        Assignment costs; ``np.inf`` marks a forbidden pair. Every row is
        assigned to a distinct column, so ``m <= n`` is needed for feasibility.
    k : int
        Number of solutions requested.

    Returns
    -------
    list of (assignment, cost)
        ``assignment[j]`` is the column given to row ``j``. Fewer than ``k``
        entries are returned when fewer feasible assignments exist; an empty
        list means the problem is infeasible.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    cost = np.array(cost, dtype=float, ndmin=2)
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    m, n = cost.shape
    if m == 0:
        return [((), 0.0)]

    forced = _forced_rows(cost)
    if forced.size:
        fixed_cols = np.isfinite(cost[forced]).argmax(axis=1)
        fixed_cost = float(cost[forced, fixed_cols].sum())
        free = np.setdiff1d(np.arange(m), forced)
        keep_cols = np.setdiff1d(np.arange(n), fixed_cols)
        sub = murty_kbest(cost[np.ix_(free, keep_cols)], k) if free.size else [((), 0.0)]
        out = []
        for assign, c in sub:
            full = np.empty(m, dtype=np.int64)
            full[forced] = fixed_cols
            full[free] = keep_cols[list(assign)] if free.size else []
            out.append((tuple(int(x) for x in full), c + fixed_cost))
        return out

    first = _solve(cost)
    if first is None:
        return []
    counter = itertools.count()
    # node: (cost, tiebreak, assignment, number of fixed leading rows, forbidden pairs)
    heap = [(first[1], next(counter), first[0], 0, ())]
    out: list[tuple[tuple[int, ...], float]] = []
    while heap and len(out) < k:
        total, _, assign, n_fixed, forbidden = heapq.heappop(heap)
        out.append((tuple(int(x) for x in assign), total))
        if len(out) == k:
            break
        for t in range(n_fixed, m):
            # children fix rows [0, t) to this solution and forbid (t, assign[t])
            child_forbidden = tuple(p for p in forbidden if p[0] >= t) + ((t, int(assign[t])),)
            used = assign[:t]
            free_cols = np.setdiff1d(np.arange(n), used, assume_unique=True)
            sub = cost[t:][:, free_cols]
            for row, col in child_forbidden:
                pos = np.searchsorted(free_cols, col)
                if pos < free_cols.size and free_cols[pos] == col:
                    sub[row - t, pos] = np.inf
            solved = _solve(sub)
            if solved is None:
                continue
            cols, sub_cost = solved
            child = np.concatenate([assign[:t], free_cols[cols]])
            fixed_cost = cost[np.arange(t), assign[:t]].sum() if t else 0.0
            heapq.heappush(heap, (float(fixed_cost + sub_cost), next(counter), child, t, child_forbidden))
    return out

