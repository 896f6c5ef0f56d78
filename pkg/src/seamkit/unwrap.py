"""Seam cutting, per-island least-squares conformal maps, and UV atlases."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from seamkit.mesh import IndexedMesh, MeshError, SeamEdgeSet

logger = logging.getLogger(__name__)

# Triangles with 3D area below this fraction of the total are excluded from
# the conformal system and from distortion sums.
AREA_EXCLUDE_REL = 1e-12
# Relative residual bound for the normal-equation solve.
SOLVE_RESIDUAL_REL = 1e-8


class UnwrapError(MeshError):
    pass


class CutContractError(UnwrapError):
    """A seam edge is not an edge of the mesh."""


class DegenerateIslandError(UnwrapError):
    """Island has no usable (positive-area) triangles."""


class DegenerateTriangleError(UnwrapError):
    """Triangle has zero 3D area; it is skipped in distortion sums."""


class SolveError(UnwrapError):
    """Linear solve failed to reach the required residual."""


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass(frozen=True)
class CutMesh:
    """Mesh split along seam edges.

    Vertices on seams are duplicated once per corner-fan wedge delimited by
    seam or boundary edges; ``orig_vertex`` maps every cut vertex back to its
    source.  ``face_island[f]`` is the connected component of the face
    adjacency graph restricted to non-seam edges.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    orig_vertex: np.ndarray
    face_island: np.ndarray
    n_islands: int


def cut_mesh(mesh: IndexedMesh, seams: SeamEdgeSet) -> CutMesh:
    """Split the mesh along the given seam edges and label islands."""
    seam_ids = set()
    for a, b in seams.edges:
        eid = mesh.edge_id(a, b)
        if eid is None:
            raise CutContractError(f"seam edge ({a}, {b}) is not a mesh edge")
        seam_ids.add(eid)

    n_faces = mesh.n_triangles
    tri = mesh.triangles

    # face adjacency across non-seam edges (pairwise over incidences)
    face_adj: list[list[int]] = [[] for _ in range(n_faces)]
    for eid, faces in enumerate(mesh.edge_faces):
        if eid in seam_ids or len(faces) < 2:
            continue
        for i in range(len(faces)):
            for j in range(i + 1, len(faces)):
                face_adj[faces[i]].append(faces[j])
                face_adj[faces[j]].append(faces[i])

    # islands by breadth-first search in ascending face order
    face_island = np.full(n_faces, -1, dtype=np.int64)
    n_islands = 0
    for start in range(n_faces):
        if face_island[start] != -1:
            continue
        queue = deque([start])
        face_island[start] = n_islands
        while queue:
            f = queue.popleft()
            for g in face_adj[f]:
                if face_island[g] == -1:
                    face_island[g] = n_islands
                    queue.append(g)
        n_islands += 1

    # corner wedges: corners of a vertex merge across non-seam interior edges
    slot_of = [
        {int(tri[f, k]): k for k in range(3)} for f in range(n_faces)
    ]
    uf = _UnionFind(3 * n_faces)
    for eid, faces in enumerate(mesh.edge_faces):
        if eid in seam_ids or len(faces) < 2:
            continue
        a, b = (int(x) for x in mesh.edges[eid])
        for i in range(len(faces)):
            for j in range(i + 1, len(faces)):
                fa, fb = faces[i], faces[j]
                for v in (a, b):
                    uf.union(3 * fa + slot_of[fa][v], 3 * fb + slot_of[fb][v])

    wedge_id: dict[int, int] = {}
    new_tri = np.empty_like(tri)
    new_pos: list[np.ndarray] = []
    new_orig: list[int] = []
    for f in range(n_faces):
        for k in range(3):
            root = uf.find(3 * f + k)
            if root not in wedge_id:
                wedge_id[root] = len(new_pos)
                new_pos.append(mesh.vertices[tri[f, k]])
                new_orig.append(int(tri[f, k]))
            new_tri[f, k] = wedge_id[root]

    return CutMesh(
        vertices=np.asarray(new_pos, dtype=np.float64).reshape(-1, 3),
        triangles=new_tri,
        orig_vertex=np.asarray(new_orig, dtype=np.int64),
        face_island=face_island,
        n_islands=n_islands,
    )


# ---------------------------------------------------------------------------
# Triangle deformation gradients


def _local_frames(p3d: np.ndarray):
    """Batched orthonormal 2D frames: returns (E, double_area) for (F,3,3) input.

    E[f] is the 2x2 matrix whose columns are the triangle's edge vectors
    (p2-p1, p3-p1) expressed in the local frame.
    """
    e1 = p3d[:, 1] - p3d[:, 0]
    e2 = p3d[:, 2] - p3d[:, 0]
    nrm = np.cross(e1, e2)
    a2 = np.linalg.norm(nrm, axis=1)
    l1 = np.linalg.norm(e1, axis=1)
    good = (a2 > 0) & (l1 > 0)
    ex = np.zeros_like(e1)
    ez = np.zeros_like(e1)
    ex[good] = e1[good] / l1[good, None]
    ez[good] = nrm[good] / a2[good, None]
    ey = np.cross(ez, ex)
    E = np.zeros((len(p3d), 2, 2))
    E[:, 0, 0] = l1
    E[:, 0, 1] = np.einsum("ij,ij->i", e2, ex)
    E[:, 1, 1] = np.einsum("ij,ij->i", e2, ey)
    return E, a2, good


def _jacobians(p3d: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Batched 2x2 deformation gradients from local 3D frames to UV."""
    E, a2, good = _local_frames(p3d)
    U = np.stack(
        [uv[:, 1] - uv[:, 0], uv[:, 2] - uv[:, 0]], axis=2
    )  # columns (uv2-uv1, uv3-uv1)
    det = E[:, 0, 0] * E[:, 1, 1]
    inv = np.zeros_like(E)
    safe = det != 0
    inv[safe, 0, 0] = E[safe, 1, 1] / det[safe]
    inv[safe, 0, 1] = -E[safe, 0, 1] / det[safe]
    inv[safe, 1, 1] = E[safe, 0, 0] / det[safe]
    return U @ inv


def triangle_jacobian(p3d, p2d) -> tuple[float, float]:
    """Singular values (descending) of one triangle's deformation gradient."""
    p3d = np.asarray(p3d, dtype=np.float64).reshape(1, 3, 3)
    p2d = np.asarray(p2d, dtype=np.float64).reshape(1, 3, 2)
    _, a2, good = _local_frames(p3d)
    if not good[0]:
        raise DegenerateTriangleError("triangle has zero 3D area")
    J = _jacobians(p3d, p2d)
    s = np.linalg.svd(J[0], compute_uv=False)
    return float(s[0]), float(s[1])


# ---------------------------------------------------------------------------
# Least-squares conformal parameterization


@dataclass(frozen=True)
class IslandParam:
    """Solved 2D coordinates for one island's cut vertices."""

    vertex_ids: np.ndarray
    uv: np.ndarray
    pins: tuple
    nondisk: bool
    residual: float


def _bfs_farthest(adj: dict, starts) -> tuple[int, dict]:
    dist = {s: 0 for s in starts}
    queue = deque(starts)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    best = max(dist.values())
    far = min(v for v, d in dist.items() if d == best)
    return far, dist


def parameterize_island(
    cut: CutMesh,
    island: int,
    excluded: np.ndarray | None = None,
) -> IslandParam:
    """Least-squares conformal solve for one island.

    Two pins (the island's farthest vertex pair under unweighted graph
    distance, found by a double BFS sweep) are fixed to (0,0) and (1,0).
    Non-disk islands get a diagnostic flag and one extra pinned vertex.
    Raises DegenerateIslandError when no positive-area triangle remains.
    """
    faces = np.flatnonzero(cut.face_island == island)
    if len(faces) == 0:
        raise UnwrapError(f"island {island} has no faces")
    tris = cut.triangles[faces]
    verts = np.unique(tris)

    # Euler characteristic of the island submesh decides disk-ness
    edge_set = set()
    for t in tris:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            edge_set.add((min(t[i], t[j]), max(t[i], t[j])))
    chi = len(verts) - len(edge_set) + len(tris)
    nondisk = chi != 1
    if nondisk:
        logger.warning("island %d is not a disk (chi=%d); adding an extra pin", island, chi)

    if excluded is not None:
        active = faces[~excluded[faces]]
    else:
        active = faces
    if len(active) == 0:
        raise DegenerateIslandError(f"island {island} has only degenerate triangles")

    uv_full = np.zeros((len(cut.vertices), 2))
    residual = 0.0
    pins_used: list[int] = []
    for comp in _active_components(cut, active):
        res, pins = _solve_component(cut, comp, nondisk, uv_full)
        residual = max(residual, res)
        pins_used.extend(pins)

    return IslandParam(
        vertex_ids=verts,
        uv=uv_full[verts],
        pins=tuple(pins_used),
        nondisk=nondisk,
        residual=residual,
    )


def _active_components(cut: CutMesh, active_faces: np.ndarray):
    """Connected components of the active faces under shared cut edges."""
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for f in active_faces:
        t = cut.triangles[f]
        for i, j in ((0, 1), (1, 2), (2, 0)):
            key = (min(t[i], t[j]), max(t[i], t[j]))
            edge_faces.setdefault(key, []).append(int(f))
    adj: dict[int, list[int]] = {int(f): [] for f in active_faces}
    for fs in edge_faces.values():
        for i in range(len(fs)):
            for j in range(i + 1, len(fs)):
                adj[fs[i]].append(fs[j])
                adj[fs[j]].append(fs[i])
    seen = set()
    for f in sorted(adj):
        if f in seen:
            continue
        comp = [f]
        seen.add(f)
        queue = deque([f])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.append(v)
                    queue.append(v)
        yield np.asarray(sorted(comp))


def _solve_component(cut: CutMesh, faces: np.ndarray, nondisk: bool, uv_out: np.ndarray):
    tris = cut.triangles[faces]
    verts = np.unique(tris)
    index = {int(v): i for i, v in enumerate(verts)}
    nv = len(verts)

    # vertex adjacency for pin selection
    adj: dict[int, set] = {int(v): set() for v in verts}
    for t in tris:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            adj[int(t[i])].add(int(t[j]))
            adj[int(t[j])].add(int(t[i]))
    start = int(verts.min())
    p0, _ = _bfs_farthest(adj, [start])
    p1, _ = _bfs_farthest(adj, [p0])
    if p1 == p0:  # single-vertex component cannot happen with a valid triangle
        raise DegenerateIslandError("component has no extent")
    pins = [(p0, (0.0, 0.0)), (p1, (1.0, 0.0))]
    if nondisk:
        extra, _ = _bfs_farthest(adj, [p0, p1])
        if extra not in (p0, p1):
            pins.append((extra, (0.5, 1.0)))

    p3d = cut.vertices[tris]
    E, a2, good = _local_frames(p3d)
    areas = a2 / 2.0
    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    nrows = 0
    pin_index = {index[v]: np.asarray(xy) for v, xy in pins}
    free = [i for i in range(nv) if i not in pin_index]
    free_col = {i: c for c, i in enumerate(free)}
    nf = len(free)
    b_rows: list[np.ndarray] = []

    for f in range(len(faces)):
        if not good[f] or areas[f] <= 0:
            continue
        w = 1.0 / np.sqrt(areas[f])
        x1 = np.array([0.0, 0.0])
        x2 = np.array([E[f, 0, 0], 0.0])
        x3 = np.array([E[f, 0, 1], E[f, 1, 1]])
        W = np.array(
            [x3 - x2, x1 - x3, x2 - x1]
        )  # per-corner complex weights (re, im)
        rhs = np.zeros(2)
        for k in range(3):
            i = index[int(tris[f, k])]
            wre, wim = w * W[k]
            if i in pin_index:
                u, v = pin_index[i]
                rhs[0] -= wre * u - wim * v
                rhs[1] -= wim * u + wre * v
            else:
                c = free_col[i]
                # real row: wre * u - wim * v
                rows_i.append(2 * nrows)
                cols.append(c)
                vals.append(wre)
                rows_i.append(2 * nrows)
                cols.append(nf + c)
                vals.append(-wim)
                # imaginary row: wim * u + wre * v
                rows_i.append(2 * nrows + 1)
                cols.append(c)
                vals.append(wim)
                rows_i.append(2 * nrows + 1)
                cols.append(nf + c)
                vals.append(wre)
        b_rows.append(rhs)
        nrows += 1

    if nrows == 0:
        raise DegenerateIslandError("no positive-area triangles in component")

    uv = np.zeros((nv, 2))
    for i, xy in pin_index.items():
        uv[i] = xy

    if nf > 0:
        A = sp.coo_matrix(
            (vals, (rows_i, cols)), shape=(2 * nrows, 2 * nf)
        ).tocsr()
        b = np.concatenate(b_rows)
        K = (A.T @ A).tocsc()
        rhs = A.T @ b
        with np.errstate(all="ignore"):
            x = spla.spsolve(K, rhs)
        if not np.all(np.isfinite(x)):
            raise SolveError("conformal system is singular")
        res = np.linalg.norm(K @ x - rhs)
        scale = max(np.linalg.norm(rhs), 1e-30)
        if res > SOLVE_RESIDUAL_REL * scale:
            # one refinement pass before giving up
            x = x + spla.spsolve(K, rhs - K @ x)
            res = np.linalg.norm(K @ x - rhs)
            if res > SOLVE_RESIDUAL_REL * scale:
                raise SolveError(
                    f"normal-system residual {res / scale:.2e} above {SOLVE_RESIDUAL_REL}"
                )
        rel_res = res / scale
        for i, c in free_col.items():
            uv[i, 0] = x[c]
            uv[i, 1] = x[nf + c]
    else:
        rel_res = 0.0

    for v, i in index.items():
        uv_out[v] = uv[i]
    return rel_res, [v for v, _ in pins]


# ---------------------------------------------------------------------------
# Atlas assembly


@dataclass(frozen=True)
class UVAtlas:
    """Cut mesh with per-vertex UVs and per-triangle deformation data.

    ``sigma`` holds descending singular values of each triangle's deformation
    gradient (NaN for excluded triangles); ``area3d`` the 3D triangle areas.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uv: np.ndarray
    face_island: np.ndarray
    island_count: int
    sigma: np.ndarray
    area3d: np.ndarray
    excluded: np.ndarray
    nondisk_islands: tuple = ()
    residuals: tuple = ()

    @property
    def n_excluded(self) -> int:
        return int(self.excluded.sum())

    def distortion_terms(self) -> np.ndarray:
        """Per-triangle |sigma1^2 - sigma2^2| (NaN on excluded triangles)."""
        return np.abs(self.sigma[:, 0] ** 2 - self.sigma[:, 1] ** 2)


def unwrap_atlas(cut: CutMesh) -> UVAtlas:
    """Parameterize every island and assemble deformation data."""
    areas = 0.5 * np.linalg.norm(
        np.cross(
            cut.vertices[cut.triangles[:, 1]] - cut.vertices[cut.triangles[:, 0]],
            cut.vertices[cut.triangles[:, 2]] - cut.vertices[cut.triangles[:, 0]],
        ),
        axis=1,
    )
    total = areas.sum()
    excluded = areas < AREA_EXCLUDE_REL * max(total, np.finfo(float).tiny)

    uv = np.zeros((len(cut.vertices), 2))
    nondisk = []
    residuals = []
    for island in range(cut.n_islands):
        param = parameterize_island(cut, island, excluded=excluded)
        uv[param.vertex_ids] = param.uv
        if param.nondisk:
            nondisk.append(island)
        residuals.append(param.residual)

    sigma = np.full((len(cut.triangles), 2), np.nan)
    live = ~excluded
    if live.any():
        J = _jacobians(cut.vertices[cut.triangles[live]], uv[cut.triangles[live]])
        sigma[live] = np.linalg.svd(J, compute_uv=False)
    return UVAtlas(
        vertices=cut.vertices,
        triangles=cut.triangles,
        uv=uv,
        face_island=cut.face_island,
        island_count=cut.n_islands,
        sigma=sigma,
        area3d=areas,
        excluded=excluded,
        nondisk_islands=tuple(nondisk),
        residuals=tuple(residuals),
    )


def unwrap_mesh(mesh: IndexedMesh, seams: SeamEdgeSet) -> UVAtlas:
    """cut_mesh + unwrap_atlas in one step."""
    return unwrap_atlas(cut_mesh(mesh, seams))


# ---------------------------------------------------------------------------
# Exports


def layout_uv(atlas: UVAtlas, gap_rel: float = 0.05) -> np.ndarray:
    """Translate islands onto a shelf so they do not overlap (no rescaling).

    Translation preserves every triangle's deformation gradient, so metrics
    recomputed from the laid-out UVs match the solver output.
    """
    uv = atlas.uv.copy()
    boxes = []
    for island in range(atlas.island_count):
        verts = np.unique(atlas.triangles[atlas.face_island == island])
        lo = uv[verts].min(axis=0)
        hi = uv[verts].max(axis=0)
        boxes.append((island, verts, lo, hi))
    if not boxes:
        return uv
    max_dim = max(max(hi - lo) for _, _, lo, hi in boxes)
    gap = gap_rel * max(max_dim, 1e-12)
    row_width = 4 * (max_dim + gap) + gap
    x = y = 0.0
    row_h = 0.0
    for island, verts, lo, hi in boxes:
        w, h = hi - lo
        if x > 0 and x + w > row_width:
            x = 0.0
            y += row_h + gap
            row_h = 0.0
        uv[verts] = uv[verts] - lo + [x, y]
        x += w + gap
        row_h = max(row_h, h)
    return uv


def atlas_to_obj(atlas: UVAtlas) -> str:
    """OBJ export (v + vt + f v/vt) with islands laid out side by side."""
    uv = layout_uv(atlas)
    lines = []
    for x, y, z in atlas.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}\n")
    for u, v in uv:
        lines.append(f"vt {u:.9g} {v:.9g}\n")
    for a, b, c in atlas.triangles:
        lines.append(f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}\n")
    return "".join(lines)


def _ramp(t: float) -> str:
    """Light-to-bright-yellow color ramp; brighter means more distortion."""
    lo = np.array([255.0, 252.0, 224.0])
    hi = np.array([255.0, 196.0, 0.0])
    c = lo + (hi - lo) * min(max(t, 0.0), 1.0)
    return f"rgb({int(c[0])},{int(c[1])},{int(c[2])})"


def atlas_to_svg(atlas: UVAtlas, width: float = 800.0) -> str:
    """SVG atlas: islands side by side, per-triangle fill from the distortion term.

    The color ramp is clipped at the 95th percentile of the per-triangle
    terms, so a few extreme triangles do not wash out the rest.
    """
    uv = layout_uv(atlas)
    terms = atlas.distortion_terms()
    live = ~atlas.excluded
    if live.any():
        p95 = float(np.percentile(terms[live], 95))
    else:
        p95 = 1.0
    p95 = max(p95, 1e-30)

    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    scale = width / span[0]
    height = span[1] * scale
    pad = 0.01 * width

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 2 * pad:.1f}" '
        f'height="{height + 2 * pad:.1f}" viewBox="0 0 {width + 2 * pad:.1f} {height + 2 * pad:.1f}">\n'
    ]
    parts.append('<rect width="100%" height="100%" fill="white"/>\n')
    for f, (a, b, c) in enumerate(atlas.triangles):
        pts = []
        for v in (a, b, c):
            x = (uv[v, 0] - lo[0]) * scale + pad
            y = height - (uv[v, 1] - lo[1]) * scale + pad  # flip v axis
            pts.append(f"{x:.2f},{y:.2f}")
        if atlas.excluded[f]:
            fill = "rgb(200,200,200)"
        else:
            fill = _ramp(terms[f] / p95)
        parts.append(
            f'<polygon points="{" ".join(pts)}" fill="{fill}" '
            'stroke="rgb(120,120,120)" stroke-width="0.3"/>\n'
        )
    parts.append("</svg>\n")
    return "".join(parts)
