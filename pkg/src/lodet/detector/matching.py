"""Kuhn-Munkres (Hungarian) assignment for rectangular cost matrices."""
from __future__ import annotations

import numpy as np


def hungarian_match(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of min(n, m) row/column pairs.

    Shortest augmenting path with dual potentials, O(n^2 m) for n <= m.
    Returns (row, col) pairs sorted by row.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {C.shape}")
    if C.size == 0:
        return []
    if not np.isfinite(C).all():
        raise ValueError("cost matrix contains non-finite entries")
    flipped = C.shape[0] > C.shape[1]
    if flipped:
        C = C.T
    n, m = C.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row assigned to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = C[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            cols = np.nonzero(used)[0]
            u[owner[cols]] += delta
            v[cols] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    pairs = [(int(owner[j]) - 1, j - 1) for j in range(1, m + 1) if owner[j]]
    if flipped:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def assignment_cost(cost, pairs) -> float:
    C = np.asarray(cost, dtype=np.float64)
    return float(sum(C[r, c] for r, c in pairs))
