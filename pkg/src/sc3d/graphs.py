"""Directed-graph utilities: topological ordering with cycle witnesses."""

from __future__ import annotations

import numpy as np


def topological_sort(adjacency: np.ndarray) -> tuple[list[int] | None, list[int] | None]:
    """Order the nodes of a directed graph, or report a cycle.

    ``adjacency[j, i] != 0`` means edge i -> j. Returns ``(order, None)``
    with ``order.index(i) < order.index(j)`` for every edge i -> j, or
    ``(None, cycle)`` where ``cycle`` is a list of nodes forming a
    directed cycle. Smallest-index-first tie-breaking keeps the order
    deterministic.
    """
    a = np.asarray(adjacency)
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError("adjacency must be square")
    if np.any(np.diag(a) != 0):
        return None, [int(np.flatnonzero(np.diag(a))[0])]

    indeg = (a != 0).sum(axis=1)  # row j counts parents of j
    order: list[int] = []
    ready = sorted(np.flatnonzero(indeg == 0).tolist())
    removed = np.zeros(d, dtype=bool)
    while ready:
        i = ready.pop(0)
        order.append(i)
        removed[i] = True
        # children of i: rows j with a[j, i] != 0
        children = np.flatnonzero(a[:, i])
        newly = []
        for j in children:
            if removed[j]:
                continue
            indeg[j] -= 1
            if indeg[j] == 0:
                newly.append(int(j))
        if newly:
            ready = sorted(ready + newly)
    if len(order) == d:
        return order, None
    return None, _find_cycle(a, removed)


def _find_cycle(a: np.ndarray, removed: np.ndarray) -> list[int]:
    """Walk parent pointers inside the unresolved subgraph until a repeat."""
    start = int(np.flatnonzero(~removed)[0])
    seen: dict[int, int] = {}
    path: list[int] = []
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        parents = [int(i) for i in np.flatnonzero(a[node]) if not removed[i]]
        node = parents[0]  # exists: every unresolved node kept positive indegree
    # path segment follows parent pointers; reverse it so consecutive
    # nodes are joined by forward edges, then rotate to the smallest node
    cycle = list(reversed(path[seen[node]:]))
    k = cycle.index(min(cycle))
    return cycle[k:] + cycle[:k]


def is_acyclic(adjacency: np.ndarray) -> bool:
    order, _ = topological_sort(adjacency)
    return order is not None
