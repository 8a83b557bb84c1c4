"""Minimum-cost bipartite assignment (Hungarian method with dual potentials).

Rectangular problems and forbidden pairs are handled by padding to a square
matrix: dummy cells cost 0 and forbidden cells cost more than any complete
allowed matching, so the solver first maximizes the number of allowed pairs
and then minimizes their cost. Among equal-cost optima the lexicographically
smallest set of ``(row, col)`` pairs is returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..exceptions import UsageError


@dataclass(frozen=True)
class AssignmentProblem:
    cost: np.ndarray
    forbid: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=np.float64)
        if cost.ndim != 2:
            if cost.size == 0:
                cost = cost.reshape(0, 0)
            else:
                raise UsageError("cost must be a 2-d matrix")
        forbid = frozenset((int(r), int(c)) for r, c in self.forbid)
        for r, c in forbid:
            if not (0 <= r < cost.shape[0] and 0 <= c < cost.shape[1]):
                raise UsageError(f"forbidden pair {(r, c)} outside the cost matrix")
        allowed = np.ones(cost.shape, dtype=bool)
        for r, c in forbid:
            allowed[r, c] = False
        if not np.all(np.isfinite(cost[allowed])):
            raise UsageError("allowed pairs must have finite cost")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "forbid", forbid)

    @property
    def allowed(self) -> np.ndarray:
        mask = np.ones(self.cost.shape, dtype=bool)
        for r, c in self.forbid:
            mask[r, c] = False
        return mask


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]
    total_cost: float
    complete: bool  # covers min(rows, cols) pairs

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


def _hungarian(c: list[list[float]]):
    """Square minimization; returns (col_of_row, u, v) with u, v feasible duals."""
    n = len(c)
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row (1-based) assigned to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
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
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _has_perfect_matching(rows: Sequence[int], adj: list[list[int]], banned_cols: set) -> bool:
    """Kuhn's augmenting paths on the given rows, avoiding ``banned_cols``."""
    match_col: dict[int, int] = {}

    def augment(r: int, seen: set) -> bool:
        for col in adj[r]:
            if col in banned_cols or col in seen:
                continue
            seen.add(col)
            if col not in match_col or augment(match_col[col], seen):
                match_col[col] = r
                return True
        return False

    return all(augment(r, set()) for r in rows)


def _lexicographic_optimum(c: list[list[float]], u, v, col_of_row) -> list[int]:
    n = len(c)
    # potentials carry round-off proportional to the largest (padding) cost
    tol = 1e-11 * max(1.0, max((abs(x) for row in c for x in row), default=1.0))
    # zero reduced cost edges: every perfect matching on them is optimal
    adj = [[j for j in range(n) if c[i][j] - u[i] - v[j] <= tol] for i in range(n)]
    result = []
    fixed_cols: set = set()
    for i in range(n):
        for j in adj[i]:
            if j in fixed_cols:
                continue
            fixed_cols.add(j)
            if _has_perfect_matching(range(i + 1, n), adj, fixed_cols):
                result.append(j)
                break
            fixed_cols.discard(j)
        else:  # pragma: no cover - the solver's own matching always survives
            return col_of_row
    return result


def solve_assignment(problem: AssignmentProblem | Sequence[Sequence[float]], forbid: Iterable = ()) -> Matching:
    """Minimum-cost matching over the allowed pairs of ``problem``.

    Never raises on infeasibility: rows whose every allowed column is taken
    stay unmatched and ``Matching.complete`` is ``False``.
    """
    if not isinstance(problem, AssignmentProblem):
        problem = AssignmentProblem(np.asarray(problem, dtype=np.float64), frozenset(forbid))
    cost = problem.cost
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return Matching((), 0.0, True)
    allowed = problem.allowed
    n = max(n_rows, n_cols)
    finite = cost[allowed]
    span = float(np.abs(finite).max()) if finite.size else 0.0
    big = (2.0 * span + 1.0) * (n + 1)
    padded = np.zeros((n, n), dtype=np.float64)
    padded[:n_rows, :n_cols] = np.where(allowed, cost, big)
    c = padded.tolist()
    col_of_row, u, v = _hungarian(c)
    col_of_row = _lexicographic_optimum(c, u, v, col_of_row)
    pairs = tuple(
        (r, col_of_row[r])
        for r in range(n_rows)
        if col_of_row[r] < n_cols and allowed[r, col_of_row[r]]
    )
    total = float(sum(cost[r, j] for r, j in pairs))
    return Matching(pairs, total, len(pairs) == min(n_rows, n_cols))
