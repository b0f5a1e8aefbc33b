"""Triangulated surfaces: builders, metrics and red-green refinement.

A :class:`SurfaceMesh` is an immutable bundle of vertex coordinates and
counterclockwise (w.r.t. the outward normal) vertex triples.  Refinement
returns a new mesh; the refinement genealogy (midpoint table and green
parents) travels with it so that later refinements can undo green closures
and so that P1 functions can be prolongated between nested meshes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

GEOMETRIES = ("sphere", "flat")
_NO_PARENT = (-1, -1, -1)


@dataclass(frozen=True)
class TriangleMetrics:
    """Per-triangle geometry.

    Attributes
    ----------
    diameter : np.ndarray, shape (T,)
        Longest edge length h_T.
    area : np.ndarray, shape (T,)
    normal : np.ndarray, shape (T, 3)
        Unit normal, outward for closed surfaces and +z for screens.
    """

    diameter: np.ndarray
    area: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Conforming triangulation of a closed surface or an open screen.

    ``green_parent[t]`` holds the vertex triple of the triangle that was
    bisected to create green triangle ``t`` (``-1`` rows for regular ones).
    ``midpoints`` maps a sorted vertex pair to the vertex created at its
    midpoint by an earlier refinement.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    geometry: str = "flat"
    green_parent: np.ndarray | None = None
    midpoints: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (V, 3), got {v.shape}")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle references a vertex out of range")
        gp = self.green_parent
        gp = np.full(t.shape, -1, dtype=np.int64) if gp is None else np.asarray(gp, dtype=np.int64)
        if gp.shape != t.shape:
            raise ValueError("green_parent must have one row per triangle")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "green_parent", gp)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def is_green(self) -> np.ndarray:
        return self.green_parent[:, 0] >= 0

    @cached_property
    def _edge_table(self):
        t = self.triangles
        directed = np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(directed, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 3), counts, directed.reshape(-1, 3, 2)

    @property
    def edges(self) -> np.ndarray:
        """Undirected edges as sorted vertex pairs, shape (E, 2)."""
        return self._edge_table[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edge ``(v[i], v[i+1])`` per triangle, shape (T, 3)."""
        return self._edge_table[1]

    @property
    def edge_counts(self) -> np.ndarray:
        return self._edge_table[2]

    @cached_property
    def edge_triangles(self) -> dict[tuple[int, int], list[int]]:
        """Edge-adjacency map: sorted vertex pair -> incident triangle indices."""
        out: dict[tuple[int, int], list[int]] = {}
        for ti, tri in enumerate(self.triangles.tolist()):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                out.setdefault((min(a, b), max(a, b)), []).append(ti)
        return out

    @property
    def boundary_edges(self) -> np.ndarray:
        """Boolean flag per undirected edge: True when only one triangle uses it."""
        return self.edge_counts == 1

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @cached_property
    def metrics(self) -> TriangleMetrics:
        p = self.vertices[self.triangles]
        e0 = p[:, 1] - p[:, 0]
        e1 = p[:, 2] - p[:, 1]
        e2 = p[:, 0] - p[:, 2]
        c = np.cross(e0, -e2)
        twice_area = np.linalg.norm(c, axis=1)
        lengths = np.stack([np.linalg.norm(e, axis=1) for e in (e0, e1, e2)], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            normal = c / twice_area[:, None]
        return TriangleMetrics(diameter=lengths.max(axis=1), area=0.5 * twice_area, normal=normal)

    @property
    def diameters(self) -> np.ndarray:
        return self.metrics.diameter

    @property
    def areas(self) -> np.ndarray:
        return self.metrics.area

    @property
    def normals(self) -> np.ndarray:
        return self.metrics.normal

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def h_min(self) -> float:
        return float(self.diameters.min())

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def diameter(self) -> float:
        """Diameter of the whole surface (max vertex-vertex distance)."""
        v = self.vertices
        if len(v) > 4000:
            # hull-free bound is enough for support estimates on big meshes
            c = v.mean(axis=0)
            return float(2.0 * np.linalg.norm(v - c, axis=1).max())
        d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
        return float(np.sqrt(d2.max()))

    def shape_ratio(self) -> np.ndarray:
        """Circumradius / inradius per triangle (2 for equilateral)."""
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        area = self.areas
        circum = a * b * c / (4.0 * area)
        inradius = 2.0 * area / (a + b + c)
        return circum / inradius

    def vertex_parents(self) -> np.ndarray:
        """(V, 2) parent vertex pair of each refinement midpoint, -1 for coarse vertices."""
        out = np.full((self.n_vertices, 2), -1, dtype=np.int64)
        for (a, b), m in self.midpoints.items():
            out[m] = (a, b)
        return out

    def replace(self, **changes) -> "SurfaceMesh":
        kw = dict(vertices=self.vertices, triangles=self.triangles, geometry=self.geometry,
                  green_parent=self.green_parent, midpoints=dict(self.midpoints))
        kw.update(changes)
        return SurfaceMesh(**kw)


# ----------------------------------------------------------------------
# invariants
# ----------------------------------------------------------------------
def conformity_defects(mesh: SurfaceMesh, tol: float = 1e-12) -> list[str]:
    """List violations of conformity, orientation and positivity (empty if valid)."""
    problems: list[str] = []
    if np.any(mesh.areas <= 0):
        problems.append(f"{int(np.sum(mesh.areas <= 0))} triangles with nonpositive area")
    edges, tri_edge, counts, directed = mesh._edge_table
    if np.any(counts > 2):
        problems.append(f"{int(np.sum(counts > 2))} non-manifold edges")
    # orientation: an interior edge must appear once in each direction
    flat_dir = directed.reshape(-1, 2)
    flat_edge = tri_edge.ravel()
    forward = flat_dir[:, 0] < flat_dir[:, 1]
    fwd_count = np.bincount(flat_edge, weights=forward, minlength=len(edges))
    interior = counts == 2
    bad = interior & (fwd_count != 1)
    if np.any(bad):
        problems.append(f"{int(bad.sum())} interior edges with inconsistent orientation")
    if mesh.geometry == "sphere" and np.any(counts == 1):
        problems.append(f"{int(np.sum(counts == 1))} open edges on a closed surface")
    # hanging nodes: a vertex strictly inside a boundary edge
    v = mesh.vertices
    scale = mesh.h_max if mesh.n_triangles else 1.0
    for a, b in edges[counts == 1]:
        pa, pb = v[a], v[b]
        d = pb - pa
        L2 = d @ d
        s = (v - pa) @ d / L2
        off = np.linalg.norm(v - pa - s[:, None] * d, axis=1)
        inside = (s > tol) & (s < 1 - tol) & (off < tol * scale)
        if np.any(inside):
            problems.append(f"hanging node on edge ({a}, {b})")
    return problems


def is_conforming(mesh: SurfaceMesh) -> bool:
    return not conformity_defects(mesh)


# ----------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------
def _icosahedron() -> SurfaceMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    # enforce outward orientation
    p = v[f]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", n, p.mean(axis=1)) < 0
    f[flip] = f[flip][:, ::-1]
    return SurfaceMesh(v, f, geometry="sphere")


def build_icosphere(level: int) -> SurfaceMesh:
    """Icosahedron refined ``level`` times with vertices on the unit sphere."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    mesh = _icosahedron()
    for _ in range(level):
        mesh = refine(mesh, range(mesh.n_triangles))
    return mesh


def build_square_screen(n: int) -> SurfaceMesh:
    """[-0.5, 0.5]^2 x {0} as n x n squares, each cut along its rising diagonal."""
    if n < 1:
        raise ValueError("n must be positive")
    x = np.linspace(-0.5, 0.5, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    return SurfaceMesh(verts, tris, geometry="flat")


TRIANGLE_KINDS = {
    # hypotenuse normalized to 1, right angle at the last vertex
    "45-45-90": np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]),
    "30-60-90": np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.75, np.sqrt(3.0) / 4.0, 0.0]]),
}


def build_triangle_screen(kind: str, level: int = 0) -> SurfaceMesh:
    """Flat right-triangle screen (hypotenuse 1) red-refined ``level`` times."""
    if kind not in TRIANGLE_KINDS:
        raise ValueError(f"kind must be one of {sorted(TRIANGLE_KINDS)}, got {kind!r}")
    if level < 0:
        raise ValueError("level must be nonnegative")
    mesh = SurfaceMesh(TRIANGLE_KINDS[kind].copy(), np.array([[0, 1, 2]]), geometry="flat")
    for _ in range(level):
        mesh = refine(mesh, range(mesh.n_triangles))
    return mesh


def build_geometry(name: str, level: int) -> SurfaceMesh:
    """Dispatch used by the CLI and the study harness.

    For ``square`` the level is the number of subdivisions per side.
    """
    if name == "sphere":
        return build_icosphere(level)
    if name == "square":
        return build_square_screen(level)
    if name == "tri45":
        return build_triangle_screen("45-45-90", level)
    if name == "tri3060":
        return build_triangle_screen("30-60-90", level)
    raise ValueError(f"unknown geometry {name!r}")


# ----------------------------------------------------------------------
# red-green refinement
# ----------------------------------------------------------------------
def _tri_edges(tri):
    a, b, c = tri
    return ((min(a, b), max(a, b)), (min(b, c), max(b, c)), (min(c, a), max(c, a)))


def _ratio(a, b, c) -> float:
    la, lb, lc = np.linalg.norm(b - c), np.linalg.norm(c - a), np.linalg.norm(a - b)
    twice_area = np.linalg.norm(np.cross(b - a, c - a))
    return float(la * lb * lc * (la + lb + lc) / (2.0 * twice_area**2))


def refine(mesh: SurfaceMesh, marked, shape_growth: float = 2.0) -> SurfaceMesh:
    """Red-refine the marked triangles and close the mesh with green bisections.

    Green triangles never get refined directly: whenever one of them is
    marked, or one of its edges must be split, the green pair is replaced
    by its parent, which is then red-refined.  A regular triangle whose
    green halves would have a circumradius/inradius ratio above
    ``shape_growth`` times its own is red-refined instead.  Together this
    keeps the shape ratio within ``shape_growth`` times that of the initial
    mesh across arbitrarily many refinement steps.
    """
    if mesh.n_triangles == 0:
        raise ValueError("cannot refine an empty mesh")
    marked = {int(i) for i in marked}
    if not marked:
        return mesh
    if min(marked) < 0 or max(marked) >= mesh.n_triangles:
        raise IndexError("marked triangle index out of range")

    verts = [row for row in mesh.vertices]
    midpoints = dict(mesh.midpoints)

    def _green_ratio(t, k):
        v0, v1, v2 = t[(k + 2) % 3], t[k], t[(k + 1) % 3]
        pm = 0.5 * (verts[v1] + verts[v2])
        return max(_ratio(verts[v0], verts[v1], pm), _ratio(verts[v0], pm, verts[v2]))
    on_sphere = mesh.geometry == "sphere"

    def midpoint(e):
        m = midpoints.get(e)
        if m is None:
            p = 0.5 * (verts[e[0]] + verts[e[1]])
            if on_sphere:
                p = p / np.linalg.norm(p)
            verts.append(p)
            m = len(verts) - 1
            midpoints[e] = m
        return m

    # live triangles keyed by an insertion counter to keep the output order stable
    tris: dict[int, tuple[int, int, int]] = dict(enumerate(map(tuple, mesh.triangles.tolist())))
    parent_of: dict[int, tuple[int, int, int]] = {
        i: tuple(p) for i, p in enumerate(mesh.green_parent.tolist()) if p[0] >= 0
    }
    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, p in parent_of.items():
        groups.setdefault(p, []).append(i)
    counter = len(tris)

    def hanging_edges():
        present = {e for t in tris.values() for e in _tri_edges(t)}
        hang = set()
        for e in present:
            m = midpoints.get(e)
            if m is not None:
                a, b = e
                if (min(a, m), max(a, m)) in present and (min(m, b), max(m, b)) in present:
                    hang.add(e)
        return hang

    pending = set(marked)
    while pending:
        red: set[int] = set()
        for idx in sorted(pending):
            if idx not in tris:
                continue
            parent = parent_of.get(idx)
            if parent is None:
                red.add(idx)
                continue
            for sib in groups.pop(parent):
                del tris[sib]
                parent_of.pop(sib)
                red.discard(sib)
            tris[counter] = parent
            red.add(counter)
            counter += 1
        for idx in sorted(red):
            a, b, c = tris.pop(idx)
            mab = midpoint((min(a, b), max(a, b)))
            mbc = midpoint((min(b, c), max(b, c)))
            mca = midpoint((min(c, a), max(c, a)))
            for child in ((a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)):
                tris[counter] = child
                counter += 1
        hang = hanging_edges()
        pending = set()
        for idx, t in tris.items():
            hits = [k for k, e in enumerate(_tri_edges(t)) if e in hang]
            if len(hits) >= 2 or (hits and idx in parent_of):
                pending.add(idx)
            elif hits and _green_ratio(t, hits[0]) > shape_growth * _ratio(*(verts[i] for i in t)):
                # a green split here would degrade shape regularity too much
                pending.add(idx)

    hang = hanging_edges()
    out_tris: list[tuple[int, int, int]] = []
    out_parent: list[tuple[int, int, int]] = []
    for idx in sorted(tris):
        t = tris[idx]
        hits = [k for k, e in enumerate(_tri_edges(t)) if e in hang]
        if not hits:
            out_tris.append(t)
            out_parent.append(parent_of.get(idx, _NO_PARENT))
            continue
        # exactly one hanging edge on a regular triangle: bisect towards the opposite vertex
        k = hits[0]
        v0, v1, v2 = t[(k + 2) % 3], t[k], t[(k + 1) % 3]
        m = midpoints[(min(v1, v2), max(v1, v2))]
        out_tris.append((v0, v1, m))
        out_tris.append((v0, m, v2))
        out_parent.extend([t, t])

    new = SurfaceMesh(np.array(verts), np.array(out_tris, dtype=np.int64), geometry=mesh.geometry,
                      green_parent=np.array(out_parent, dtype=np.int64), midpoints=midpoints)
    logger.debug("refine: %d marked, %d -> %d triangles", len(marked), mesh.n_triangles, new.n_triangles)
    return new


def prolongation_matrix(coarse: SurfaceMesh, fine: SurfaceMesh):
    """Sparse matrix mapping coarse P1 nodal values to the nested fine mesh.

    Uses the midpoint genealogy stored on ``fine``: every fine vertex is a
    coarse vertex or the midpoint of an edge between two older vertices.
    """
    import scipy.sparse as sp

    nc, nf = coarse.n_vertices, fine.n_vertices
    if nf < nc or not np.array_equal(fine.vertices[:nc], coarse.vertices):
        raise ValueError("fine mesh is not a refinement of the coarse mesh")
    parents = fine.vertex_parents()
    rows: list[dict[int, float]] = [{i: 1.0} for i in range(nc)]
    for m in range(nc, nf):
        a, b = parents[m]
        if a < 0:
            raise ValueError(f"fine vertex {m} has no refinement parents")
        row: dict[int, float] = {}
        for src in (rows[a], rows[b]):
            for j, w in src.items():
                row[j] = row.get(j, 0.0) + 0.5 * w
        rows.append(row)
    indptr = np.cumsum([0] + [len(r) for r in rows])
    indices = np.fromiter((j for r in rows for j in r), dtype=np.int64, count=indptr[-1])
    data = np.fromiter((w for r in rows for w in r.values()), dtype=float, count=indptr[-1])
    return sp.csr_matrix((data, indices, indptr), shape=(nf, nc))
