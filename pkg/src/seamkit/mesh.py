"""Indexed triangle meshes: OBJ I/O, normalization, UV seams, edge graphs."""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Two corner UVs are "the same" below this per-component difference, in UV units.
UV_SEAM_TOL = 1e-7


class MeshError(Exception):
    """Base class for mesh-layer failures."""


class ObjParseError(MeshError):
    """Malformed OBJ record."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"OBJ line {line_no}: {message}")
        self.line_no = line_no


class ObjIndexError(ObjParseError):
    """Face references an out-of-range vertex or texture coordinate."""


class DegenerateInputError(MeshError):
    """Input geometry carries no usable extent (zero bounding box, zero area)."""


class MissingUVError(MeshError):
    """Operation requires per-corner UVs but the mesh has none."""


@dataclass(frozen=True)
class IndexedMesh:
    """Immutable triangle mesh with derived edge connectivity.

    ``vertices`` is (V, 3) float64, ``triangles`` (F, 3) int64.  ``uv_corners``
    is either None or (3F, 2): row ``3*f + k`` is the UV of corner ``k`` of
    face ``f``.  Edges are derived at construction: ``edges`` holds sorted
    vertex pairs in lexicographic order, ``edge_faces[e]`` the incident face
    ids, ``edge_lengths[e]`` the Euclidean length.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uv_corners: np.ndarray | None = None

    edges: np.ndarray = field(init=False, repr=False, compare=False)
    edge_faces: tuple = field(init=False, repr=False, compare=False)
    edge_lengths: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_ids: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (F, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if t.size and (
            np.any(t[:, 0] == t[:, 1])
            or np.any(t[:, 1] == t[:, 2])
            or np.any(t[:, 0] == t[:, 2])
        ):
            raise MeshError("degenerate triangle (repeated vertex index)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.uv_corners is not None:
            uv = np.ascontiguousarray(np.asarray(self.uv_corners, dtype=np.float64))
            if uv.ndim != 2 or uv.shape[1] != 2 or uv.shape[0] != 3 * len(t):
                raise MeshError(
                    f"uv_corners must be (3F, 2) = ({3 * len(t)}, 2), got {uv.shape}"
                )
            object.__setattr__(self, "uv_corners", uv)
        self._build_edges()

    def _build_edges(self):
        t = self.triangles
        if len(t) == 0:
            object.__setattr__(self, "edges", np.zeros((0, 2), dtype=np.int64))
            object.__setattr__(self, "edge_faces", ())
            object.__setattr__(self, "edge_lengths", np.zeros(0))
            object.__setattr__(self, "_edge_ids", {})
            return
        pairs = t[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        faces_per_edge: list[list[int]] = [[] for _ in range(len(edges))]
        for corner, e in enumerate(np.asarray(inverse).ravel()):
            faces_per_edge[e].append(corner // 3)
        lengths = np.linalg.norm(
            self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1
        )
        edge_ids = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
        nonmanifold = sum(1 for fs in faces_per_edge if len(fs) > 2)
        if nonmanifold:
            logger.warning("mesh has %d non-manifold edges", nonmanifold)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_faces", tuple(tuple(fs) for fs in faces_per_edge))
        object.__setattr__(self, "edge_lengths", lengths)
        object.__setattr__(self, "_edge_ids", edge_ids)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def has_uvs(self) -> bool:
        return self.uv_corners is not None

    @property
    def nonmanifold_edges(self) -> tuple[int, ...]:
        """Edge ids with more than two incident triangles."""
        return tuple(i for i, fs in enumerate(self.edge_faces) if len(fs) > 2)

    def edge_id(self, a: int, b: int) -> int | None:
        key = (a, b) if a < b else (b, a)
        return self._edge_ids.get(key)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1
        )

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps model coordinates into the canonical cube [-0.5, 0.5]^3.

    Points transform as ``(p - center) * scale``; the longest bounding-box
    axis spans exactly [-0.5, 0.5] and aspect ratios are preserved.
    """

    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


@dataclass(frozen=True)
class SeamEdgeSet:
    """Mesh edges marked as seams, with optional per-edge provenance.

    ``edges`` holds undirected vertex-index pairs stored as ``(min, max)``.
    ``provenance[edge]`` lists the indices of the seam segments that
    contributed the edge (empty for seams extracted from UVs).
    """

    edges: frozenset
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        norm = frozenset((int(min(a, b)), int(max(a, b))) for a, b in self.edges)
        object.__setattr__(self, "edges", norm)

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, edge) -> bool:
        a, b = edge
        return (min(a, b), max(a, b)) in self.edges

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_text(self) -> str:
        return "".join(f"{a} {b}\n" for a, b in self.sorted_edges())

    @classmethod
    def from_text(cls, text: str) -> "SeamEdgeSet":
        edges = set()
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MeshError(f"seam edge line {line_no}: expected two indices")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise MeshError(f"seam edge line {line_no}: {exc}") from exc
            edges.add((min(a, b), max(a, b)))
        return cls(edges=frozenset(edges))


@dataclass(frozen=True)
class EdgeGraph:
    """Vertex-edge graph of a mesh: one node per vertex, one weighted arc per edge."""

    n: int
    adjacency: tuple  # adjacency[v] = ((neighbor, length), ...) sorted by neighbor

    def neighbors(self, v: int):
        return self.adjacency[v]


# ---------------------------------------------------------------------------
# OBJ I/O


def _read_text(source) -> str:
    if isinstance(source, os.PathLike):
        with open(source, "r", encoding="utf-8", errors="replace") as fh:
            return fh.read()
    if isinstance(source, str):
        if "\n" not in source and os.path.exists(source):
            with open(source, "r", encoding="utf-8", errors="replace") as fh:
                return fh.read()
        return source
    if isinstance(source, bytes):
        return source.decode("utf-8", errors="replace")
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    raise TypeError(f"unsupported OBJ source: {type(source)!r}")


def load_obj(source) -> IndexedMesh:
    """Parse an ASCII OBJ stream (path, text, bytes, or file object).

    Supports ``v``, ``vt`` and ``f`` records with face forms ``v``, ``v/vt``,
    ``v/vt/vn`` and ``v//vn``; polygons with more than three vertices are
    fan-triangulated around the first vertex.  ``uv_corners`` is populated iff
    every face corner supplies a ``vt`` reference.  Unknown record types are
    ignored.
    """
    text = _read_text(source)
    vertices: list[tuple[float, float, float]] = []
    texcoords: list[tuple[float, float]] = []
    # face corners as (vertex_index, vt_index_or_None) with 1-based indices
    faces: list[tuple[list[tuple[int, int | None]], int]] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ObjParseError("vertex record needs 3 coordinates", line_no)
            try:
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise ObjParseError(f"bad vertex coordinate: {exc}", line_no) from exc
        elif tag == "vt":
            if len(parts) < 3:
                raise ObjParseError("texture record needs 2 coordinates", line_no)
            try:
                texcoords.append((float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise ObjParseError(f"bad texture coordinate: {exc}", line_no) from exc
        elif tag == "f":
            if len(parts) < 4:
                raise ObjParseError("face record needs at least 3 corners", line_no)
            corners: list[tuple[int, int | None]] = []
            for ref in parts[1:]:
                fields = ref.split("/")
                if len(fields) > 3 or fields[0] == "":
                    raise ObjParseError(f"bad face corner {ref!r}", line_no)
                try:
                    vi = int(fields[0])
                    ti = None
                    if len(fields) >= 2 and fields[1] != "":
                        ti = int(fields[1])
                except ValueError as exc:
                    raise ObjParseError(f"bad face corner {ref!r}", line_no) from exc
                corners.append((vi, ti))
            faces.append((corners, line_no))
        # vn, o, g, s, usemtl, mtllib ... are ignored

    all_have_uv = len(faces) > 0 and all(
        ti is not None for corners, _ in faces for _, ti in corners
    )
    tri_rows: list[tuple[int, int, int]] = []
    uv_rows: list[tuple[float, float]] = []
    for corners, line_no in faces:
        resolved: list[tuple[int, int | None]] = []
        for vi, ti in corners:
            if not (1 <= vi <= len(vertices)):
                raise ObjIndexError(f"vertex index {vi} out of range", line_no)
            if ti is not None and not (1 <= ti <= len(texcoords)):
                raise ObjIndexError(f"texture index {ti} out of range", line_no)
            resolved.append((vi - 1, (ti - 1) if ti is not None else None))
        for k in range(1, len(resolved) - 1):
            fan = (resolved[0], resolved[k], resolved[k + 1])
            tri_rows.append(tuple(vi for vi, _ in fan))
            if all_have_uv:
                uv_rows.extend(texcoords[ti] for _, ti in fan)

    uv = np.asarray(uv_rows, dtype=np.float64).reshape(-1, 2) if all_have_uv else None
    try:
        return IndexedMesh(
            vertices=np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
            triangles=np.asarray(tri_rows, dtype=np.int64).reshape(-1, 3),
            uv_corners=uv,
        )
    except MeshError as exc:
        raise ObjParseError(str(exc), 0) from exc


def save_obj(mesh: IndexedMesh) -> str:
    """Serialize to OBJ text with 9 significant digits per coordinate."""
    out = []
    for x, y, z in mesh.vertices:
        out.append(f"v {x:.9g} {y:.9g} {z:.9g}\n")
    if mesh.has_uvs:
        for u, v in mesh.uv_corners:
            out.append(f"vt {u:.9g} {v:.9g}\n")
        for f, (a, b, c) in enumerate(mesh.triangles):
            base = 3 * f
            out.append(
                f"f {a + 1}/{base + 1} {b + 1}/{base + 2} {c + 1}/{base + 3}\n"
            )
    else:
        for a, b, c in mesh.triangles:
            out.append(f"f {a + 1} {b + 1} {c + 1}\n")
    return "".join(out)


# ---------------------------------------------------------------------------
# Normalization


def normalize(mesh: IndexedMesh) -> tuple[IndexedMesh, NormalizationTransform]:
    """Center the mesh and scale its longest bounding-box axis to length 1.

    Returns the transformed mesh and the recorded (invertible) transform.
    Raises DegenerateInputError when the bounding box has zero extent.
    """
    if mesh.n_vertices == 0:
        raise DegenerateInputError("mesh has no vertices")
    lo, hi = mesh.bounding_box()
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateInputError("bounding box has zero extent")
    center = (lo + hi) / 2.0
    transform = NormalizationTransform(center=center, scale=1.0 / extent)
    moved = IndexedMesh(
        vertices=transform.apply(mesh.vertices),
        triangles=mesh.triangles,
        uv_corners=mesh.uv_corners,
    )
    return moved, transform


# ---------------------------------------------------------------------------
# UV-derived seams


def extract_uv_seams(mesh: IndexedMesh, tol: float = UV_SEAM_TOL) -> SeamEdgeSet:
    """Interior edges whose incident triangles disagree on a shared corner UV.

    Boundary edges are excluded; non-manifold edges are checked over every
    incidence pair.  Requires ``uv_corners``.
    """
    if not mesh.has_uvs:
        raise MissingUVError("extract_uv_seams requires per-corner UVs")
    uv = mesh.uv_corners
    tri = mesh.triangles
    seams = set()
    for e, faces in enumerate(mesh.edge_faces):
        if len(faces) < 2:
            continue
        a, b = mesh.edges[e]
        mismatch = False
        for i in range(len(faces)):
            for j in range(i + 1, len(faces)):
                fa, fb = faces[i], faces[j]
                for v in (a, b):
                    ka = int(np.where(tri[fa] == v)[0][0])
                    kb = int(np.where(tri[fb] == v)[0][0])
                    if np.max(np.abs(uv[3 * fa + ka] - uv[3 * fb + kb])) > tol:
                        mismatch = True
            if mismatch:
                break
        if mismatch:
            seams.add((int(a), int(b)))
    return SeamEdgeSet(edges=frozenset(seams))


# ---------------------------------------------------------------------------
# Edge graph


def build_edge_graph(mesh: IndexedMesh) -> EdgeGraph:
    """One node per vertex, one undirected arc per mesh edge (Euclidean weight)."""
    adj: list[list[tuple[int, float]]] = [[] for _ in range(mesh.n_vertices)]
    for (a, b), w in zip(mesh.edges, mesh.edge_lengths):
        adj[int(a)].append((int(b), float(w)))
        adj[int(b)].append((int(a), float(w)))
    return EdgeGraph(
        n=mesh.n_vertices,
        adjacency=tuple(tuple(sorted(nbrs)) for nbrs in adj),
    )
