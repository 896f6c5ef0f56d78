"""Seam quality evaluation: distortion, fragmentation, runtime."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from seamkit.mesh import IndexedMesh, SeamEdgeSet, build_edge_graph, normalize
from seamkit.projection import project_seams
from seamkit.tokenizer import SeamSet
from seamkit.unwrap import UVAtlas, cut_mesh, unwrap_atlas


class MetricsError(Exception):
    pass


class UndefinedMetricError(MetricsError):
    """Every triangle was excluded; the distortion average is undefined."""


class StageError(MetricsError):
    """Wraps a failure from one pipeline stage with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SeamMetrics:
    """Evaluation record for one seam set on one mesh."""

    distortion: float
    fragments: int
    runtime_s: float
    excluded_triangles: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SeamMetrics":
        return cls(
            distortion=float(d["distortion"]),
            fragments=int(d["fragments"]),
            runtime_s=float(d["runtime_s"]),
            excluded_triangles=int(d["excluded_triangles"]),
        )


def distortion(atlas: UVAtlas) -> float:
    """Area-weighted mean of |sigma1^2 - sigma2^2| over non-excluded triangles.

    Weights are the 3D triangle areas.  Zero for conformal (similarity) maps.
    """
    live = ~atlas.excluded
    if not live.any():
        raise UndefinedMetricError("all triangles are excluded")
    terms = atlas.distortion_terms()[live]
    areas = atlas.area3d[live]
    return float(np.sum(areas * terms) / np.sum(areas))


def fragmentation(atlas: UVAtlas) -> int:
    """Number of UV islands."""
    return int(atlas.island_count)


def evaluate_edges(
    mesh: IndexedMesh, seam_edges: SeamEdgeSet, pre_seconds: float = 0.0
) -> tuple[SeamMetrics, UVAtlas]:
    """Cut along marked edges, parameterize, and measure.

    ``pre_seconds`` is added to the reported runtime (used by evaluate() to
    account for the projection stage).
    """
    t0 = time.perf_counter()
    try:
        cut = cut_mesh(mesh, seam_edges)
    except Exception as exc:
        raise StageError("cut", exc) from exc
    try:
        atlas = unwrap_atlas(cut)
    except Exception as exc:
        raise StageError("parameterize", exc) from exc
    try:
        dist = distortion(atlas)
    except Exception as exc:
        raise StageError("metrics", exc) from exc
    runtime = pre_seconds + (time.perf_counter() - t0)
    return (
        SeamMetrics(
            distortion=dist,
            fragments=fragmentation(atlas),
            runtime_s=runtime,
            excluded_triangles=atlas.n_excluded,
        ),
        atlas,
    )


def evaluate(
    mesh: IndexedMesh, seams: SeamSet, normalize_input: bool = True
) -> SeamMetrics:
    """Full pipeline: normalize, project, cut, parameterize, measure.

    The mesh is first mapped into the canonical cube, so the metrics are
    invariant to uniform rescaling of the input; seam segments are expected
    in canonical-cube coordinates.  Runtime covers projection through
    parameterization, excluding any file I/O.
    """
    metrics, _ = evaluate_with_atlas(mesh, seams, normalize_input=normalize_input)
    return metrics


def evaluate_with_atlas(
    mesh: IndexedMesh, seams: SeamSet, normalize_input: bool = True
) -> tuple[SeamMetrics, UVAtlas]:
    if normalize_input:
        try:
            mesh, _ = normalize(mesh)
        except Exception as exc:
            raise StageError("normalize", exc) from exc
    t0 = time.perf_counter()
    try:
        graph = build_edge_graph(mesh)
        edges = project_seams(mesh, seams, graph=graph)
    except Exception as exc:
        raise StageError("project", exc) from exc
    project_time = time.perf_counter() - t0
    return evaluate_edges(mesh, edges, pre_seconds=project_time)
