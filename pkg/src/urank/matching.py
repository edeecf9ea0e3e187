"""Maximum-weight item/position matching (Kuhn-Munkres) and a brute-force reference."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import check_permutation

BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True, eq=False)
class MatchingResult:
    """``assignment`` maps item index -> 1-based position; unplaced items are absent."""

    assignment: dict[int, int]
    total_weight: float
    n_items: int
    n_positions: int

    @property
    def unplaced(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_items) if i not in self.assignment)

    def to_permutation(self) -> np.ndarray:
        """Display order of all items.

        Positions left empty by the matching (possible only when filling them
        cannot raise the total) are filled by unplaced items in index order, so
        every matched item keeps its matched position.
        """
        slots = [None] * self.n_positions
        for item, pos in self.assignment.items():
            slots[pos - 1] = item
        spare = list(self.unplaced)
        for p in range(self.n_positions):
            if slots[p] is None and spare:
                slots[p] = spare.pop(0)
        order = [i for i in slots if i is not None] + spare
        return np.array(order, dtype=int)


def _as_weights(weights) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    if W.ndim != 2 or W.size == 0:
        raise ValueError("weight matrix must be a nonempty 2-D array")
    if not np.all(np.isfinite(W)):
        raise ValueError("weight matrix has non-finite entries")
    return W


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Min-cost assignment for n rows <= m columns; returns the column of each row.

    Shortest-augmenting-path form with row/column potentials, O(n^2 m).
    Columns are scanned in index order, which fixes tie-breaking.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)      # owner[j]: 1-based row matched to column j; 0 free
    way = np.zeros(m + 1, dtype=int)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def km_match(weights) -> MatchingResult:
    """Exact maximum-weight matching of items (rows) to positions (columns).

    With more items than positions the matrix is padded with zero-weight
    virtual positions; items landing there are reported as unplaced.
    """
    W = _as_weights(weights)
    n, m = W.shape
    padded = np.hstack([W, np.zeros((n, n - m))]) if n > m else W
    cols = _hungarian_min(-padded)
    assignment = {i: int(c) + 1 for i, c in enumerate(cols) if c < m}
    total = float(sum(W[i, p - 1] for i, p in assignment.items()))
    return MatchingResult(assignment, total, n, m)


def brute_force_match(weights) -> MatchingResult:
    """Enumerate every injective placement; first maximum in lexicographic order wins."""
    W = _as_weights(weights)
    n, m = W.shape
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} items, got {n}")
    best_total, best = -np.inf, None
    if n >= m:
        for items in itertools.permutations(range(n), m):
            total = W[items, range(m)].sum()
            if total > best_total:
                best_total, best = total, {it: p + 1 for p, it in enumerate(items)}
    else:
        for cols in itertools.permutations(range(m), n):
            total = W[range(n), cols].sum()
            if total > best_total:
                best_total, best = total, {i: c + 1 for i, c in enumerate(cols)}
    return MatchingResult(best, float(best_total), n, m)


def utility_of_ranking(weights, order) -> float:
    """Sum of weights[item, position] over the items the order places in the available positions."""
    W = _as_weights(weights)
    n, m = W.shape
    order = check_permutation(order, n)
    shown = order[:m]
    return float(W[shown, np.arange(len(shown))].sum())
