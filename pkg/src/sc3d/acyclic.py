"""Differentiable acyclicity machinery for the instantaneous graph.

The spectral penalty runs power iteration on the nonnegative surrogate
M = B (.) B (elementwise square), whose dominant eigenvalue is a real
Perron root with nonnegative left/right eigenvectors; the gradient
follows the Perron formula chained through the square. A 2-cycle
penalty targets reciprocal edge pairs directly, and a greedy extractor
produces the maximal-by-magnitude acyclic subgraph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import topological_sort
from .types import DynamicGraph

NILPOTENT_TOL = 1e-12


@dataclass
class SpectralResult:
    rho: float
    grad_wrt_B: np.ndarray
    left_vec: np.ndarray
    right_vec: np.ndarray
    iterations_used: int


def spectral_penalty(B: np.ndarray, K: int = 15, tol: float = NILPOTENT_TOL) -> SpectralResult:
    """Estimated spectral radius of B (.) B and its gradient w.r.t. B.

    K steps of power iteration from the all-ones vector for both the
    right and left dominant eigenvectors. If an iterate collapses below
    ``tol`` the matrix is (numerically) nilpotent: rho and the gradient
    are reported as exactly zero.
    """
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    M = B * B
    zero = SpectralResult(0.0, np.zeros_like(B), np.zeros(d), np.zeros(d), 0)
    if not M.any():
        return zero

    v = np.ones(d)
    u = np.ones(d)
    used = 0
    for _ in range(K):
        v_new = M @ v
        u_new = M.T @ u
        nv = np.linalg.norm(v_new)
        nu = np.linalg.norm(u_new)
        used += 1
        if nv < tol or nu < tol:
            return zero
        v = v_new / nv
        u = u_new / nu

    uv = float(u @ v)
    if uv < tol:
        return zero
    rho = float(u @ (M @ v) / uv)
    grad = 2.0 * B * np.outer(u, v) / uv
    return SpectralResult(rho, grad, u, v, used)


def two_cycle_penalty(B: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of |B_ij * B_ji| over ordered pairs, with its gradient."""
    B = np.asarray(B, dtype=float)
    prod = B * B.T
    value = float(np.abs(prod).sum() - np.abs(np.diag(prod)).sum())
    # d/dB_ji of sum_{a,b} |B_ab B_ba|: the (j,i) and (i,j) terms both
    # contribute, hence the factor 2 on sign(B (.) B^T) (.) B^T
    grad = 2.0 * np.sign(prod) * B.T
    np.fill_diagonal(grad, 0.0)
    return value, grad


def extract_dag(B: np.ndarray, max_edges: int | None = None) -> np.ndarray:
    """Greedy acyclic subgraph keeping the highest-|weight| edges.

    Candidates are sorted by descending |B_ji| with (j, i) lexicographic
    tie-breaking; an edge is admitted iff the partial graph stays acyclic.
    Returns a binary matrix.
    """
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    cand = [(-abs(B[j, i]), j, i) for j in range(d) for i in range(d)
            if i != j and B[j, i] != 0.0]
    cand.sort()
    out = np.zeros((d, d), dtype=np.int8)
    # reach[a, b] == True when b is reachable from a along admitted edges
    reach = np.eye(d, dtype=bool)
    count = 0
    for _, j, i in cand:
        if max_edges is not None and count >= max_edges:
            break
        # admitting i -> j closes a cycle iff j already reaches i
        if reach[j, i]:
            continue
        out[j, i] = 1
        # nodes reaching i now also reach everything reachable from j
        reach[np.ix_(reach[:, i], reach[j])] = True
        count += 1
    return out


def unroll_graph(g: DynamicGraph, T_window: int) -> np.ndarray:
    """Adjacency of the time-unrolled graph on (time, node) vertices.

    Vertex (t, j) for t in 1..T_window maps to index (t-1)*d + j. Lagged
    edges connect (t-l, i) -> (t, j) wherever A_l[j, i] != 0 and
    t-l >= 1; instantaneous edges connect (t, i) -> (t, j) within each
    slice wherever B[j, i] != 0.
    """
    if T_window < 1:
        raise ValueError("T_window must be >= 1")
    d = g.dim
    n = T_window * d
    adj = np.zeros((n, n), dtype=np.int8)
    for ell, a in enumerate(g.lag_matrices, start=1):
        rows, cols = np.nonzero(a)
        for t in range(ell + 1, T_window + 1):
            src = (t - ell - 1) * d
            dst = (t - 1) * d
            for j, i in zip(rows, cols):
                adj[dst + j, src + i] = 1
    rows, cols = np.nonzero(g.instant_matrix)
    for t in range(1, T_window + 1):
        base = (t - 1) * d
        for j, i in zip(rows, cols):
            if i != j:
                adj[base + j, base + i] = 1
    return adj


def unrolled_is_acyclic(g: DynamicGraph, T_window: int) -> bool:
    order, _ = topological_sort(unroll_graph(g, T_window))
    return order is not None
