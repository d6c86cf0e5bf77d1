"""Minimum-cost bipartite matching with a distance gate.

The solver is the shortest-augmenting-path form of the Hungarian method
(O(n^2 m) for an n x m matrix, n <= m). Entries above the gate are
forbidden: the solver first maximises the number of admissible pairs and
then minimises their total cost. Among equally good matchings the one whose
sorted pair list is lexicographically smallest is returned, so results do
not depend on the order in which the solver happens to explore columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INF = math.inf


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unassigned_rows: list[int] = field(default_factory=list)
    unassigned_cols: list[int] = field(default_factory=list)
    cost: float = 0.0


def _hungarian(cost: list[list[float]]) -> tuple[float, list[int]]:
    """Solve a dense n x m problem with n <= m.

    Returns the optimal total and, for each row, its column.
    """
    n = len(cost)
    if n == 0:
        return 0.0, []
    m = len(cost[0])
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    cols = range(1, m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = INF
            j1 = 0
            for j in cols:
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    match = [0] * n
    for j in cols:
        if p[j]:
            match[p[j] - 1] = j - 1
    total = sum(cost[i][match[i]] for i in range(n))
    return total, match


def _optimum(cost: list[list[float]], rows: list[int], cols: list[int]) -> float:
    if not rows or not cols:
        return 0.0
    sub = [[cost[r][c] for c in cols] for r in rows]
    if len(rows) > len(cols):
        sub = [list(col) for col in zip(*sub)]
    return _hungarian(sub)[0]


def solve_assignment(cost_matrix: Sequence[Sequence[float]] | np.ndarray, gate: float = INF) -> Assignment:
    """Match rows to columns at minimum total cost.

    Parameters
    ----------
    cost_matrix : R x C array of non-negative finite costs
    gate : entries strictly greater than ``gate`` are never paired

    Returns
    -------
    Assignment
        Pairs sorted by row; surplus rows/columns are reported unassigned.
    """
    a = np.asarray(cost_matrix, dtype=float)
    if a.size == 0:
        r = a.shape[0] if a.ndim == 2 else 0
        c = a.shape[1] if a.ndim == 2 else 0
        return Assignment(unassigned_rows=list(range(r)), unassigned_cols=list(range(c)))
    if a.ndim != 2:
        raise ValueError("cost matrix must be two-dimensional")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("costs must be finite and non-negative")
    n_rows, n_cols = a.shape
    allowed = a <= gate
    if not allowed.any():
        return Assignment(unassigned_rows=list(range(n_rows)), unassigned_cols=list(range(n_cols)))

    # Forbidden pairs cost more than any admissible matching could, so the
    # optimum first maximises admissible pairs. Dummy columns let every row
    # opt out at that same price.
    big = float(a[allowed].max()) * min(n_rows, n_cols) + 1.0
    padded = np.where(allowed, a, big)
    padded = np.hstack([padded, np.full((n_rows, n_rows), big)]).tolist()
    n_real = n_cols

    rows_all = list(range(n_rows))
    cols_all = list(range(n_cols + n_rows))
    best = _optimum(padded, rows_all, cols_all)
    tol = 1e-9 * max(1.0, abs(best))

    pairs: list[tuple[int, int]] = []
    free_cols = list(cols_all)
    fixed = 0.0
    dummy = n_real
    for r in rows_all:
        rest_rows = rows_all[r + 1:]
        chosen = None
        for c in free_cols:
            if c >= n_real:
                break
            if not allowed[r, c]:
                continue
            remaining = [k for k in free_cols if k != c]
            total = fixed + padded[r][c] + _optimum(padded, rest_rows, remaining)
            if total <= best + tol:
                chosen = c
                break
        if chosen is None:
            # opting out must be optimal when no admissible column is
            while dummy not in free_cols:
                dummy += 1
            chosen = dummy
            fixed += big
        else:
            fixed += padded[r][chosen]
            pairs.append((r, chosen))
        free_cols.remove(chosen)

    matched_rows = {r for r, _ in pairs}
    matched_cols = {c for _, c in pairs}
    return Assignment(
        pairs=pairs,
        unassigned_rows=[r for r in rows_all if r not in matched_rows],
        unassigned_cols=[c for c in range(n_cols) if c not in matched_cols],
        cost=float(sum(a[r, c] for r, c in pairs)),
    )
