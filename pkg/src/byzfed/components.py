"""Connected components of a pairwise-distance threshold graph.

Shared by the ingestion protocol and the edge-cut clusterer. Pairwise
distances are computed exactly in blocks; intended for N up to ~1e5
points (the block product keeps peak memory at block_size * N floats).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = ["threshold_components"]


def threshold_components(points, gamma: float, block_size: int = 2048) -> list[np.ndarray]:
    """Components of the graph with an edge iff ||p_i - p_j|| < gamma.

    Returns a list of index arrays, each sorted ascending, ordered by the
    smallest index they contain (deterministic). Distance is strict: a
    pair at exactly gamma is not connected.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise ConfigError(f"expected points of shape (N, d), got {P.shape}")
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    n = P.shape[0]
    sq = np.einsum("ij,ij->i", P, P)
    thresh = gamma * gamma

    parent = np.arange(n)

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:  # path compression
            parent[i], i = root, parent[i]
        return root

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        # squared distances from the block to every point
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (P[start:stop] @ P.T)
        rows, cols = np.nonzero(d2 < thresh)
        for r, c in zip(rows, cols):
            i = start + int(r)
            j = int(c)
            if i < j:
                union(i, j)

    roots = np.fromiter((find(i) for i in range(n)), dtype=int, count=n)
    comps: dict[int, list[int]] = {}
    for i, r in enumerate(roots):
        comps.setdefault(int(r), []).append(i)
    return [np.asarray(comps[r], dtype=int) for r in sorted(comps)]
