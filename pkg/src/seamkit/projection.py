"""Projection of 3D seam segments onto mesh topology as marked seam edges."""

from __future__ import annotations

import heapq
import logging

import numpy as np

from seamkit.mesh import EdgeGraph, IndexedMesh, MeshError, SeamEdgeSet, build_edge_graph
from seamkit.tokenizer import SeamSet

logger = logging.getLogger(__name__)


class ProjectionError(MeshError):
    pass


class UnreachableError(ProjectionError):
    """The two path endpoints lie in different connected components."""


def nearest_vertex(mesh: IndexedMesh, p) -> int:
    """Index of the closest mesh vertex; ties break to the lowest index."""
    if mesh.n_vertices == 0:
        raise ProjectionError("empty mesh")
    d2 = ((mesh.vertices - np.asarray(p, dtype=np.float64)) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def shortest_path(graph: EdgeGraph, a: int, b: int) -> list[int]:
    """Minimal-total-length vertex path from a to b under edge weights.

    Dijkstra with deterministic tie-breaking: the heap orders equal distances
    by vertex index, and an equal-length relaxation is accepted only when it
    lowers the predecessor index.  Raises UnreachableError when b cannot be
    reached from a.
    """
    n = graph.n
    if not (0 <= a < n and 0 <= b < n):
        raise ProjectionError(f"vertex out of range: {a}, {b}")
    if a == b:
        return [a]
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[a] = 0.0
    heap = [(0.0, a)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == b:
            break
        for v, w in graph.adjacency[u]:
            if done[v]:
                continue
            nd = d + w
            if nd < dist[v] or (nd == dist[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    if not np.isfinite(dist[b]):
        raise UnreachableError(f"no path from {a} to {b}")
    path = [b]
    while path[-1] != a:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return path


def path_length(graph: EdgeGraph, path: list[int]) -> float:
    total = 0.0
    for u, v in zip(path, path[1:]):
        w = dict(graph.adjacency[u]).get(v)
        if w is None:
            raise ProjectionError(f"path step {u}->{v} is not a graph arc")
        total += w
    return total


def project_seams(
    mesh: IndexedMesh, seams: SeamSet, graph: EdgeGraph | None = None
) -> SeamEdgeSet:
    """Mark mesh edges for every seam segment.

    Each segment's endpoints map to their nearest vertices; the shortest
    edge path between them is marked.  Segments collapsing to one vertex add
    nothing; segments across disconnected components are skipped with a
    logged diagnostic.  Provenance records contributing segment indices per
    edge.
    """
    if mesh.n_vertices == 0:
        raise ProjectionError("empty mesh")
    if graph is None:
        graph = build_edge_graph(mesh)
    edges: dict[tuple[int, int], list[int]] = {}
    for i, seg in enumerate(seams.segments):
        va = nearest_vertex(mesh, seg[0])
        vb = nearest_vertex(mesh, seg[1])
        if va == vb:
            continue
        try:
            path = shortest_path(graph, va, vb)
        except UnreachableError:
            logger.warning(
                "segment %d skipped: vertices %d and %d are in different components",
                i,
                va,
                vb,
            )
            continue
        for u, v in zip(path, path[1:]):
            key = (min(u, v), max(u, v))
            edges.setdefault(key, []).append(i)
    return SeamEdgeSet(
        edges=frozenset(edges),
        provenance={k: tuple(v) for k, v in edges.items()},
    )


def seam_edges_to_segments(mesh: IndexedMesh, edge_set: SeamEdgeSet) -> SeamSet:
    """Each marked mesh edge becomes one seam segment with its endpoint coordinates."""
    if len(edge_set) == 0:
        return SeamSet.empty()
    rows = [
        np.stack([mesh.vertices[a], mesh.vertices[b]])
        for a, b in edge_set.sorted_edges()
    ]
    return SeamSet(segments=np.stack(rows))
