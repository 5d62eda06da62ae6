"""Communication-graph matrices for the decentralized allocator.

Node indices are 1-based at the boundary (configs, ``build_topology``) and
0-based inside the matrices.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import BadTau, DisconnectedGraph


@dataclass(frozen=True, eq=False)
class GraphTopology:
    n_nodes: int
    edges: frozenset
    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    tau: float
    weight: np.ndarray

    @property
    def lambda_max(self):
        return spectral_radius_check(self)


def _normalize_edges(edges, n_nodes):
    out = set()
    for edge in edges:
        a, b = (int(x) for x in edge)
        if a == b:
            raise ValueError(f"self-loop on node {a}")
        for node in (a, b):
            if not 1 <= node <= n_nodes:
                raise ValueError(f"node {node} outside [1, {n_nodes}]")
        out.add((min(a, b), max(a, b)))
    return frozenset(out)


def is_connected(adjacency):
    n = adjacency.shape[0]
    if n == 0:
        return False
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adjacency[u]):
            v = int(v)
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


def laplacian_lambda_max(laplacian):
    if laplacian.shape[0] == 0:
        return 0.0
    return float(np.linalg.eigvalsh(laplacian)[-1])


def build_topology(edges, n_nodes, tau=None):
    """Build adjacency, degree, Laplacian and mixing matrix of an undirected graph.

    Parameters
    ----------
    edges : iterable of pairs
        Unordered node pairs, 1-based.
    n_nodes : int
        Number of nodes.
    tau : float, optional
        Mixing constant, must exceed half the largest Laplacian eigenvalue.
        Defaults to the largest eigenvalue itself (1.0 for an edgeless
        single node), which keeps the spectrum of ``W`` inside [0, 1].

    Returns
    -------
    GraphTopology
    """
    n_nodes = int(n_nodes)
    if n_nodes < 1:
        raise ValueError("n_nodes must be positive")
    edge_set = _normalize_edges(edges, n_nodes)

    adjacency = np.zeros((n_nodes, n_nodes), dtype=np.int64)
    for a, b in edge_set:
        adjacency[a - 1, b - 1] = 1
        adjacency[b - 1, a - 1] = 1
    if not is_connected(adjacency):
        raise DisconnectedGraph(f"graph on {n_nodes} nodes has no spanning tree")

    degree = np.diag(adjacency.sum(axis=1))
    laplacian = degree - adjacency
    lmax = laplacian_lambda_max(laplacian.astype(float))

    if tau is None:
        tau = lmax if lmax > 0.0 else 1.0
    tau = float(tau)
    if not tau > 0.5 * lmax or tau <= 0.0:
        raise BadTau(f"tau={tau} must exceed lambda_max/2={0.5 * lmax}")

    weight = np.eye(n_nodes) - laplacian / tau
    for arr in (adjacency, degree, laplacian, weight):
        arr.setflags(write=False)
    return GraphTopology(n_nodes, edge_set, adjacency, degree, laplacian, tau, weight)


def spectral_radius_check(topology):
    """Largest eigenvalue of the topology's Laplacian."""
    return laplacian_lambda_max(topology.laplacian.astype(float))


def doubly_stochastic_residual(weight):
    ones = np.ones(weight.shape[0])
    return max(
        float(np.max(np.abs(weight @ ones - ones))),
        float(np.max(np.abs(ones @ weight - ones))),
    )
