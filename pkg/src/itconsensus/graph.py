"""Undirected follower graph with leader pinning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Follower adjacency ``a_ij`` plus leader-pinning weights ``b_i``.

    Validated on construction. Arrays are copied and made read-only so a
    graph can be shared freely between runs.
    """

    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        pin = np.array(self.pinning, dtype=float).reshape(-1)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {adj.shape}")
        if pin.shape[0] != adj.shape[0]:
            raise GraphError("pinning length does not match adjacency size")
        if not np.array_equal(adj, adj.T):
            raise GraphError("adjacency is not symmetric")
        if np.any(np.diag(adj) != 0):
            raise GraphError("adjacency has self loops")
        if np.any(adj < 0) or np.any(pin < 0):
            raise GraphError("negative weights")
        if not np.any(pin > 0):
            raise GraphError("no follower is pinned to the leader")
        adj.setflags(write=False)
        pin.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "pinning", pin)

    @property
    def n_followers(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[Sequence[float]],
        pinning: Sequence[float],
    ) -> "Graph":
        """Build from ``(i, j, w)`` or ``(i, j)`` tuples with 0-based labels."""
        adj = np.zeros((n, n))
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            w = float(edge[2]) if len(edge) > 2 else 1.0
            if i == j:
                raise GraphError(f"self loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
            adj[i, j] = adj[j, i] = w
        return cls(adj, np.asarray(pinning, dtype=float))

    def edges(self) -> list[tuple[int, int, float]]:
        n = self.n_followers
        return [
            (i, j, float(self.adjacency[i, j]))
            for i in range(n)
            for j in range(i + 1, n)
            if self.adjacency[i, j] != 0
        ]

    def permuted(self, perm: Sequence[int]) -> "Graph":
        p = np.asarray(perm)
        return Graph(self.adjacency[np.ix_(p, p)], self.pinning[p])


def laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency
    return np.diag(a.sum(axis=1)) - a


def pinned_laplacian(g: Graph) -> np.ndarray:
    """``L + diag(b)``."""
    return laplacian(g) + np.diag(g.pinning)


def jacobi_eigh(
    m: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors in the columns. Sweeps stop once the off-diagonal
    Frobenius norm drops below ``tol`` times the matrix norm.
    """
    a = np.array(m, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p, q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w)
    return w[order], v[:, order]


def min_eig_LB(g: Graph) -> float:
    w, _ = jacobi_eigh(pinned_laplacian(g))
    lam = float(w[0])
    if lam <= 1e-12:
        raise GraphError("graph not leader-connected (lambda_min(L+B) <= 0)")
    return lam


def min_eigpair_LB(g: Graph) -> tuple[float, np.ndarray]:
    w, v = jacobi_eigh(pinned_laplacian(g))
    if w[0] <= 1e-12:
        raise GraphError("graph not leader-connected (lambda_min(L+B) <= 0)")
    return float(w[0]), v[:, 0]


def paper_fixture_graph() -> Graph:
    """Four-follower graph reconstructed to give lambda_min(L+B) ~= 0.1981.

    The published topology figure is unavailable; this weighted path
    1-2-3-4 (weights 0.5, 1, 0.5) with the leader pinned to followers 1
    and 2 yields lambda_min = 0.198062. It is a
    reconstruction that matches the reported eigenvalue, not the
    original graph.
    """
    return Graph.from_edges(4, [(0, 1, 0.5), (1, 2, 1.0), (2, 3, 0.5)], [1.0, 1.0, 0.0, 0.0])
