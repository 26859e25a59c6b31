"""Topological persistence of maxima on regular grids.

Superlevel sets are swept from the highest value down; each local maximum
starts a component and dies (elder rule) when it merges with a component whose
maximum is higher, or equally high but earlier in flat-index order. Cells are
adjacent when their multi-indices differ by at most one in every coordinate;
selected axes may wrap around.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class PersistencePair:
    index: tuple[int, ...]
    height: float
    persistence: float


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _sweep(values, order, shape, periodic, offsets, floor, tau, limit):
    n = values.size
    d = shape.size
    parent = np.full(n, -1, np.int64)  # -1: not yet in the superlevel set
    peak = np.empty(n, np.int64)  # root -> flat index of its maximum
    rank = np.empty(n, np.int64)  # position of each cell in the sweep
    for pos in range(order.size):
        rank[order[pos]] = pos
    death = np.full(n, np.nan)
    births = np.zeros(n, np.bool_)
    multi = np.empty(d, np.int64)
    born = np.empty(order.size, np.int64)  # maxima in birth (= height) order
    n_born = 0
    head = 0  # born[:head] are decided
    passed = 0
    for pos in range(order.size):
        c = order[pos]
        level = values[c]
        parent[c] = c
        peak[c] = c
        births[c] = True
        rem = c
        for a in range(d - 1, -1, -1):
            multi[a] = rem % shape[a]
            rem //= shape[a]
        for o in range(offsets.shape[0]):
            nb = 0
            ok = True
            for a in range(d):
                j = multi[a] + offsets[o, a]
                if j < 0 or j >= shape[a]:
                    if periodic[a]:
                        j %= shape[a]
                    else:
                        ok = False
                        break
                nb = nb * shape[a] + j
            if not ok or nb == c or parent[nb] < 0:
                continue
            ra = _find(parent, c)
            rb = _find(parent, nb)
            if ra == rb:
                continue
            pa, pb = peak[ra], peak[rb]
            # elder rule: the maximum visited later in the sweep dies here
            if rank[pa] < rank[pb]:
                young, old = rb, ra
            else:
                young, old = ra, rb
            death[peak[young]] = level
            parent[young] = old
        if np.isnan(death[c]):
            born[n_born] = c
            n_born += 1
        if limit > 0 and pos + 1 < order.size and values[order[pos + 1]] < level:
            # a survivor dies at the next level at the earliest
            nxt = values[order[pos + 1]]
            while head < n_born:
                b = born[head]
                if not np.isnan(death[b]):
                    if values[b] - death[b] > tau:
                        passed += 1
                elif values[b] - nxt > tau:
                    passed += 1
                else:
                    break
                head += 1
            if passed >= limit:
                for j in range(n_born):
                    if np.isnan(death[born[j]]):
                        death[born[j]] = nxt
                return births, death, True
    for pos in range(order.size):
        c = order[pos]
        if births[c] and np.isnan(death[c]):
            death[c] = floor
    return births, death, False


def _offsets(d: int) -> NDArray[np.int64]:
    offs = [o for o in product((-1, 0, 1), repeat=d) if any(o)]
    return np.array(offs, dtype=np.int64).reshape(-1, d)


def persistence_pairs(
    values: ArrayLike,
    periodic: tuple[bool, ...] | None = None,
    *,
    tau: float = 0.0,
    limit: int = 0,
) -> list[PersistencePair]:
    """All maxima with their persistence, sorted by descending height.

    Only cells above the grid minimum take part in the sweep: components born
    at the minimum have zero persistence and merges there are equivalent to
    dying at the minimum. The global maximum never dies; its persistence is
    ``max - min``.

    With ``limit > 0`` the sweep may stop as soon as the ``limit`` highest
    maxima with persistence above ``tau`` are known; maxima still alive at
    that point report a lower bound (above ``tau``) as persistence.
    """
    grid = np.asarray(values, dtype=np.float64)
    if grid.size == 0:
        return []
    per = np.zeros(grid.ndim, dtype=np.bool_) if periodic is None else np.asarray(periodic, dtype=np.bool_)
    if per.shape != (grid.ndim,):
        raise ValueError("periodic flags must match the grid dimension")
    flat = grid.reshape(-1)
    floor = float(flat.min())
    shape = np.array(grid.shape, dtype=np.int64)
    offsets = _offsets(grid.ndim)
    # with a limit, first try the upper half of the range: its sweep is a
    # prefix of the full one and usually settles the answer
    cuts = [floor]
    if limit > 0:
        cuts.insert(0, floor + 0.5 * (float(flat.max()) - floor))
    for cut in cuts:
        active = np.flatnonzero(flat > cut)
        if active.size == 0:
            continue
        order = active[np.lexsort((active, -flat[active]))]
        births, death, done = _sweep(flat, order.astype(np.int64), shape, per, offsets, floor, tau, limit)
        if done or cut == floor:
            break
    else:
        return []
    # cells joining an existing component at their own level die instantly
    cells = np.flatnonzero(births & (death < flat))
    out = [
        PersistencePair(tuple(int(i) for i in np.unravel_index(c, grid.shape)), float(flat[c]), float(flat[c] - death[c]))
        for c in cells
    ]
    out.sort(key=lambda p: (-p.height, -p.persistence, p.index))
    return out


def persistent_peaks(
    values: ArrayLike, ratio: float, periodic: tuple[bool, ...] | None = None, limit: int | None = None
) -> list[PersistencePair]:
    """Maxima whose persistence exceeds ``ratio * max``.

    The global maximum is always kept (it is the one component that never
    dies). An all-constant grid, including all zeros, yields no peaks.
    ``limit`` keeps only the highest maxima and lets the sweep stop early;
    the selected set is unchanged (up to ties in height) but persistence
    values of maxima alive at the stop are lower bounds.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    if limit is not None and limit < 1:
        raise ValueError("limit must be positive")
    grid = np.asarray(values, dtype=np.float64)
    if grid.size == 0:
        return []
    top = float(grid.max())
    tau = ratio * top
    pairs = persistence_pairs(grid, periodic, tau=tau, limit=limit or 0)
    if not pairs:
        return []
    out = [pairs[0]] + [p for p in pairs[1:] if p.persistence > tau]
    return out[:limit] if limit else out
