"""Domain graphs over sampled coordinates.

Edges are stored directed: an edge ``(i, j)`` means ``j`` is one of the ``k``
nearest neighbours of ``i`` and therefore sends messages *to* ``i``.  Edge
attributes are ``concat(x_i, x_i - x_j)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

BRUTE_FORCE_LIMIT = 2000
IDW_EPS = 1e-12


@dataclass
class FunctionSample:
    """One sampled realisation of a field: ``values[i] = f(coords[i])``."""

    coords: np.ndarray
    values: np.ndarray
    sample_id: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.coords.ndim != 2 or self.values.ndim != 2:
            raise ValidationError("coords and values must be 2-D arrays")
        if self.coords.shape[0] != self.values.shape[0]:
            raise ValidationError(
                f"coords has {self.coords.shape[0]} rows but values has {self.values.shape[0]}"
            )
        if self.coords.shape[0] < 2:
            raise ValidationError("a sample needs at least 2 points")
        if not (np.isfinite(self.coords).all() and np.isfinite(self.values).all()):
            raise ValidationError(f"sample {self.sample_id!r} contains non-finite entries")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def d_x(self) -> int:
        return self.coords.shape[1]

    @property
    def d_f(self) -> int:
        return self.values.shape[1]

    def subset(self, index) -> "FunctionSample":
        index = np.asarray(index)
        return FunctionSample(self.coords[index], self.values[index], self.sample_id)


@dataclass
class DomainGraph:
    n_nodes: int
    k: int
    edges: np.ndarray  # (E, 2) int64, sorted by (i, j)
    edge_attrs: np.ndarray  # (E, 2 * d_x)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def neighbors(self) -> np.ndarray:
        """``(n_nodes, k)`` array; row ``i`` lists the senders into ``i`` in ascending order."""
        return self.edges[:, 1].reshape(self.n_nodes, self.k)


@dataclass
class DualGraph:
    """Source graph, query graph and the directed source -> query cross edges."""

    source: DomainGraph
    source_values: np.ndarray
    target: DomainGraph
    query_coords: np.ndarray
    k_cross: int
    cross_edges: np.ndarray  # (N_q * k_cross, 2) pairs (q, s), sorted by (q, s)
    cross_attrs: np.ndarray  # concat(x_q, x_q - x_s)
    init_features: np.ndarray = field(repr=False)

    @property
    def n_query(self) -> int:
        return self.target.n_nodes


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Per-axis accumulation so brute-force and grid search produce identical bits.
    diff = a[..., 0] - b[..., 0]
    out = diff * diff
    for d in range(1, a.shape[-1]):
        diff = a[..., d] - b[..., d]
        out = out + diff * diff
    return out


def _rank(d2: np.ndarray, cand: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Order candidates by (distance, index); ``cand`` must be ascending."""
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(np.broadcast_to(cand, d2.shape), order, axis=1), np.take_along_axis(
        d2, order, axis=1
    )


def _knn_brute(data, queries, k, exclude_self, chunk=256):
    n_q = queries.shape[0]
    idx = np.empty((n_q, k), dtype=np.int64)
    dist = np.empty((n_q, k))
    cand = np.arange(data.shape[0])
    for start in range(0, n_q, chunk):
        stop = min(start + chunk, n_q)
        d2 = _sq_dist(queries[start:stop, None, :], data[None, :, :])
        if exclude_self:
            d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        idx[start:stop], dist[start:stop] = _rank(d2, cand, k)
    return idx, dist


def _knn_grid(data, queries, k, exclude_self):
    n, d = data.shape
    lo = data.min(axis=0)
    span = np.maximum(data.max(axis=0) - lo, 1e-12)
    cell = (np.prod(span) * 2.0 * (k + 1) / n) ** (1.0 / d)
    cell = max(cell, 1e-12)

    def cell_of(points):
        return np.floor((points - lo) / cell).astype(np.int64)

    buckets: dict[tuple, np.ndarray] = {}
    data_cells = cell_of(data)
    order = np.lexsort(data_cells.T[::-1])
    keys = data_cells[order]
    breaks = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    for group in np.split(order, breaks):
        buckets[tuple(data_cells[group[0]])] = group
    occupied = np.array(list(buckets.keys()))
    cmin, cmax = occupied.min(axis=0), occupied.max(axis=0)

    idx = np.empty((queries.shape[0], k), dtype=np.int64)
    dist = np.empty((queries.shape[0], k))
    q_cells = cell_of(queries)
    q_order = np.lexsort(q_cells.T[::-1])
    q_keys = q_cells[q_order]
    q_breaks = np.flatnonzero(np.any(np.diff(q_keys, axis=0) != 0, axis=1)) + 1
    for group in np.split(q_order, q_breaks):
        centre = q_cells[group[0]]
        found: list[np.ndarray] = []
        r = 0
        while True:
            for offset in itertools.product(range(-r, r + 1), repeat=d):
                if max(abs(o) for o in offset) != r:
                    continue
                hit = buckets.get(tuple(centre + np.array(offset)))
                if hit is not None:
                    found.append(hit)
            cand = np.sort(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)
            n_valid = cand.size - (1 if exclude_self else 0)
            # everything outside the scanned block lies at least r * cell away
            covered = np.all(centre - r <= cmin) and np.all(centre + r >= cmax)
            if n_valid >= k:
                d2 = _sq_dist(queries[group][:, None, :], data[cand][None, :, :])
                if exclude_self:
                    d2[np.arange(group.size), np.searchsorted(cand, group)] = np.inf
                nb, nd = _rank(d2, cand, k)
                if covered or np.all(nd[:, -1] < (r * cell) ** 2):
                    idx[group], dist[group] = nb, nd
                    break
            elif covered:
                raise ValidationError(f"need at least {k} neighbours, only {n_valid} points available")
            r += 1
    return idx, dist


def knn_search(data, k, queries=None, method: str = "auto"):
    """Exact k-nearest-neighbour search.

    Parameters
    ----------
    data : (N, d) array
    k : int
    queries : (M, d) array, optional
        When omitted the search is over ``data`` itself and each point is
        excluded from its own neighbour list.
    method : {"auto", "brute", "grid"}
        ``auto`` uses brute force up to 2000 data points and a uniform cell
        index above that.  Both return identical results.

    Returns
    -------
    idx : (M, k) int array, ordered by (squared distance, index)
    d2 : (M, k) squared distances
    """
    data = np.asarray(data, dtype=np.float64)
    exclude_self = queries is None
    queries = data if queries is None else np.asarray(queries, dtype=np.float64)
    available = data.shape[0] - (1 if exclude_self else 0)
    if not 1 <= k <= available:
        raise ValidationError(f"k={k} out of range [1, {available}]")
    if method == "auto":
        method = "brute" if data.shape[0] <= BRUTE_FORCE_LIMIT else "grid"
    if method == "brute":
        return _knn_brute(data, queries, k, exclude_self)
    if method == "grid":
        return _knn_grid(data, queries, k, exclude_self)
    raise ValidationError(f"unknown knn method {method!r}")


def _edge_attrs(x_recv: np.ndarray, x_send: np.ndarray) -> np.ndarray:
    return np.concatenate([x_recv, x_recv - x_send], axis=1)


def graph_from_coords(coords, k: int, method: str = "auto") -> DomainGraph:
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k={k} out of range [1, {n - 1}]")
    nbr, d2 = knn_search(coords, k, method=method)
    dup = np.flatnonzero(d2[:, 0] == 0.0)
    if dup.size:
        i = int(dup[0])
        raise ValidationError(f"duplicate coordinates at points {i} and {int(nbr[i, 0])}")
    nbr = np.sort(nbr, axis=1)
    recv = np.repeat(np.arange(n), k)
    send = nbr.ravel()
    edges = np.stack([recv, send], axis=1).astype(np.int64)
    return DomainGraph(n_nodes=n, k=k, edges=edges, edge_attrs=_edge_attrs(coords[recv], coords[send]))


def build_knn_graph(sample: FunctionSample, k: int, method: str = "auto") -> DomainGraph:
    """kNN graph over ``sample.coords`` with ties broken by the smaller index."""
    return graph_from_coords(sample.coords, k, method=method)


def receptive_field(graph: DomainGraph, node: int, hops: int) -> set[int]:
    """Nodes whose features can reach ``node`` within ``hops`` aggregation steps."""
    if not 0 <= node < graph.n_nodes:
        raise IndexError(f"node {node} out of range for {graph.n_nodes} nodes")
    if hops < 0:
        raise ValidationError("hops must be non-negative")
    nbrs = graph.neighbors
    seen = np.zeros(graph.n_nodes, dtype=bool)
    seen[node] = True
    frontier = np.array([node])
    for _ in range(hops):
        nxt = np.unique(nbrs[frontier].ravel())
        nxt = nxt[~seen[nxt]]
        if nxt.size == 0:
            break
        seen[nxt] = True
        frontier = nxt
    return set(np.flatnonzero(seen).tolist())


def idw_init(source: FunctionSample, query_coords, cross_edges) -> np.ndarray:
    """Inverse-distance-squared interpolation of source values onto query points.

    ``cross_edges`` holds ``(q, s)`` pairs.  Sums are exactly rounded
    (``math.fsum``) so the result does not depend on source ordering.
    """
    query_coords = np.asarray(query_coords, dtype=np.float64)
    cross_edges = np.asarray(cross_edges, dtype=np.int64).reshape(-1, 2)
    n_q = query_coords.shape[0]
    counts = np.bincount(cross_edges[:, 0], minlength=n_q)
    if counts.size > n_q or np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0]) if np.any(counts == 0) else n_q
        raise ValidationError(f"query node {empty} has no cross neighbours")

    order = np.argsort(cross_edges[:, 0], kind="stable")
    q_idx, s_idx = cross_edges[order, 0], cross_edges[order, 1]
    d2 = _sq_dist(query_coords[q_idx], source.coords[s_idx])
    w = 1.0 / (d2 + IDW_EPS)
    wy = w[:, None] * source.values[s_idx]
    out = np.empty((n_q, source.d_f))
    start = 0
    for q in range(n_q):
        stop = start + counts[q]
        hit = np.flatnonzero(np.sqrt(d2[start:stop]) < IDW_EPS)
        if hit.size:
            out[q] = source.values[s_idx[start + hit[0]]]
        else:
            denom = math.fsum(w[start:stop])
            for c in range(source.d_f):
                out[q, c] = math.fsum(wy[start:stop, c]) / denom
        start = stop
    return out


def build_dual_graph(source: FunctionSample, query_coords, k: int, k_cross: int) -> DualGraph:
    query_coords = np.asarray(query_coords, dtype=np.float64)
    if query_coords.ndim == 1:
        query_coords = query_coords[:, None]
    if query_coords.shape[1] != source.d_x:
        raise ValidationError(f"query coords have dimension {query_coords.shape[1]}, source has {source.d_x}")
    if not 1 <= k_cross <= source.n_points:
        raise ValidationError(f"k_cross={k_cross} out of range [1, {source.n_points}]")
    src_graph = build_knn_graph(source, k)
    tgt_graph = graph_from_coords(query_coords, k)
    nbr, _ = knn_search(source.coords, k_cross, queries=query_coords)
    nbr = np.sort(nbr, axis=1)
    q_idx = np.repeat(np.arange(query_coords.shape[0]), k_cross)
    cross = np.stack([q_idx, nbr.ravel()], axis=1).astype(np.int64)
    return DualGraph(
        source=src_graph,
        source_values=source.values,
        target=tgt_graph,
        query_coords=query_coords,
        k_cross=k_cross,
        cross_edges=cross,
        cross_attrs=_edge_attrs(query_coords[cross[:, 0]], source.coords[cross[:, 1]]),
        init_features=idw_init(source, query_coords, cross),
    )
