"""Galerkin matrices of the retarded single layer operator.

Lag ``j`` block::

    A^j[k, i] = 1/(4 pi) int_G int_G xi_k(x) xi_i(y) S_j(|x - y|) / |x - y| dy dx

with ``S_j`` from :mod:`tdbem.timebasis`.  Each triangle pair is integrated
once for all lags: the inner integral over the source triangle is done
semi-analytically (see :mod:`tdbem._kernels`), the outer one with an
adaptively subdivided triangle rule.  Separated pairs whose distance range
stays inside one radial piece of the kernel use a plain tensor Gauss rule.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .mesh import SurfaceMesh
from .quadrature import collapsed_gauss, gauss_legendre
from .timebasis import LAG_SHAPES, TimeGrid

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
_CHUNK = 4096
_SHAPES = np.ascontiguousarray(LAG_SHAPES, dtype=float)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the tolerance for a triangle pair."""

    def __init__(self, pairs):
        self.pairs = [tuple(int(v) for v in p) for p in pairs]
        shown = ", ".join(f"({a}, {b})" for a, b in self.pairs[:5])
        more = "" if len(self.pairs) <= 5 else f" and {len(self.pairs) - 5} more"
        super().__init__(f"quadrature did not converge for triangle pair(s) {shown}{more}")


@dataclass(frozen=True)
class QuadratureConfig:
    """Accuracy knobs for the pair integrals.

    Attributes
    ----------
    far_order : int
        Gauss order of the outer conical-product triangle rule (``far_order**2``
        points per cell).  Separated pairs use a tensor rule of order
        ``far_order + 2`` on both triangles.
    near_depth : int
        Maximal depth of the adaptive red subdivision of the outer triangle.
    reg_order : int
        Gauss-Legendre order of the angular integrals of the inner engine.
    tol : float
        Relative tolerance of the adaptive outer quadrature.
    separation : float
        Pairs whose gap exceeds ``separation`` times the larger triangle size
        and whose distance range lies in one radial piece use the tensor rule.
    reuse_congruent : bool
        Integrate only one pair per congruence class (see
        :func:`congruence_classes`).
    """

    far_order: int = 4
    near_depth: int = 8
    reg_order: int = 8
    tol: float = 1e-6
    separation: float = 2.0
    reuse_congruent: bool = True

    def __post_init__(self):
        for name in ("far_order", "near_depth", "reg_order"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (0.0 < self.tol < 1.0):
            raise ValueError("tol must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class GalerkinBlock:
    """Symmetric sparse matrix for one time lag."""

    lag: int
    matrix: sp.csr_matrix

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


@dataclass(frozen=True, eq=False)
class BlockToeplitzOperator:
    """Blocks A^0 .. A^{J_max}; A^j couples step n with step n - j."""

    dt: float
    n_nodes: int
    blocks: tuple[GalerkinBlock, ...]

    @property
    def j_max(self) -> int:
        return len(self.blocks) - 1

    def block(self, j: int) -> sp.csr_matrix:
        if j < 0 or j > self.j_max:
            return sp.csr_matrix((self.n_nodes, self.n_nodes))
        return self.blocks[j].matrix

    def __getitem__(self, j: int) -> sp.csr_matrix:
        return self.block(j)


def j_max_for(mesh: SurfaceMesh, dt: float) -> int:
    return int(math.ceil(mesh.diameter / dt - 1e-12)) + 2


# ----------------------------------------------------------------------
# pair bookkeeping
# ----------------------------------------------------------------------
def _triangle_geometry(mesh: SurfaceMesh):
    corners = np.ascontiguousarray(mesh.vertices[mesh.triangles])
    normals = np.ascontiguousarray(mesh.normals)
    grads = np.empty((mesh.n_triangles, 3, 3))
    e = [corners[:, (i + 2) % 3] - corners[:, (i + 1) % 3] for i in range(3)]
    twice = 2.0 * mesh.areas
    for i in range(3):
        grads[:, i] = np.cross(normals, e[i]) / twice[:, None]
    return corners, normals, grads


def _pair_ranges(Xs: np.ndarray, Ys: np.ndarray):
    """Lower/upper bounds of |x - y| over triangle pairs given by their corners."""
    cx, cy = Xs.mean(axis=1), Ys.mean(axis=1)
    rx = np.linalg.norm(Xs - cx[:, None, :], axis=2).max(axis=1)
    ry = np.linalg.norm(Ys - cy[:, None, :], axis=2).max(axis=1)
    gap = np.linalg.norm(cx - cy, axis=1) - rx - ry
    dmin = np.maximum(gap, 0.0)
    diff = Xs[:, :, None, :] - Ys[:, None, :, :]
    dmax = np.sqrt((diff**2).sum(axis=3)).reshape(len(Xs), 9).max(axis=1)
    size = 2.0 * np.maximum(rx, ry)
    return dmin, dmax, size


def _all_pairs(n: int) -> np.ndarray:
    a, b = np.triu_indices(n)
    return np.column_stack([a, b]).astype(np.int64)


def _integrate_corners(Xs, Ys, dt, quad: QuadratureConfig, j_max=None):
    """Kernel driver on explicit corner arrays; returns (kmin, values, status)."""
    Xs = np.ascontiguousarray(Xs, dtype=float)
    Ys = np.ascontiguousarray(Ys, dtype=float)
    dmin, dmax, size = _pair_ranges(Xs, Ys)
    kmin = np.floor(dmin / dt).astype(np.int64)
    kmax = np.floor(dmax / dt).astype(np.int64)
    if j_max is not None:
        kmax = np.minimum(kmax, j_max)
    use_tensor = (dmin >= quad.separation * size) & (kmin == kmax)
    # piece k feeds lags k and k + 1 only
    width = int((kmax - kmin).max()) + 2 if len(Xs) else 2
    obary, ow = collapsed_gauss(quad.far_order)
    tbary, tw = collapsed_gauss(quad.far_order + 2)
    gx, gw = gauss_legendre(quad.reg_order)
    values = np.zeros((len(Xs), width, 3, 3))
    status = np.zeros(len(Xs), dtype=np.int64)
    for start in range(0, len(Xs), _CHUNK):
        sl = slice(start, start + _CHUNK)
        _kernels.assemble_pairs(Xs[sl], Ys[sl], kmin[sl], kmax[sl], use_tensor[sl], float(dt),
                                obary, ow, tbary, tw, gx, gw, _SHAPES, float(quad.tol),
                                int(quad.near_depth), values[sl], status[sl])
    values *= dt / FOUR_PI
    return kmin, values, status


def integrate_pairs(mesh: SurfaceMesh, dt: float, pairs: np.ndarray, quad: QuadratureConfig,
                    j_max: int | None = None, raise_on_failure: bool = True):
    """Local lag matrices of the given (outer, inner) triangle pairs.

    Returns ``(kmin, values)`` where ``values[p, jj, l, i]`` is the
    (test l on the outer triangle, trial i on the inner one) entry for lag
    ``kmin[p] + jj``, already scaled by dt/(4 pi).  Lags beyond the
    returned width are exactly zero.
    """
    pairs = np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)
    corners = mesh.vertices[mesh.triangles]
    kmin, values, status = _integrate_corners(corners[pairs[:, 0]], corners[pairs[:, 1]], dt, quad, j_max)
    failed = pairs[status != 0]
    if len(failed) and raise_on_failure:
        raise QuadratureError(failed)
    return kmin, values


def congruence_classes(mesh: SurfaceMesh, pairs: np.ndarray, rel_quantum: float = 1e-10):
    """Group triangle pairs that are congruent under a rigid motion or reflection.

    Returns ``(first, inverse, rot)``: ``first[c]`` is the index of the pair
    representing class ``c``, ``inverse[p]`` the class of pair ``p`` and
    ``rot[p] = (ox, oy)`` the cyclic vertex offsets under which pair ``p``
    matches the canonical vertex order of its class.  Coordinates are
    compared after rounding to ``rel_quantum * diameter``.
    """
    corners = np.ascontiguousarray(mesh.vertices[mesh.triangles])
    keys = np.empty((len(pairs), 18), dtype=np.int64)
    rot = np.empty((len(pairs), 2), dtype=np.int64)
    _kernels.congruence_keys(corners, np.ascontiguousarray(pairs), rel_quantum * mesh.diameter, keys, rot)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return first, inverse.reshape(-1), rot


def _rolled(corners_or_nodes: np.ndarray, offset: np.ndarray) -> np.ndarray:
    idx = (offset[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(corners_or_nodes, idx.reshape(idx.shape + (1,) * (corners_or_nodes.ndim - 2)),
                              axis=1)


def assemble_operator(mesh: SurfaceMesh, grid: TimeGrid | float, quad: QuadratureConfig | None = None,
                      j_max: int | None = None) -> BlockToeplitzOperator:
    """All blocks A^0 .. A^{J_max} with J_max = ceil(diam / dt) + 2.

    With ``quad.reuse_congruent`` only one pair per congruence class is
    integrated; the others reuse its local matrices with permuted vertices.
    """
    quad = quad or QuadratureConfig()
    dt = grid.dt if isinstance(grid, TimeGrid) else float(grid)
    jm = j_max_for(mesh, dt) if j_max is None else int(j_max)
    nn = mesh.n_vertices
    tri = mesh.triangles
    corners = mesh.vertices[tri]
    pairs = _all_pairs(mesh.n_triangles)
    if quad.reuse_congruent:
        first, inverse, rot = congruence_classes(mesh, pairs)
    else:
        first = np.arange(len(pairs))
        inverse = first
        rot = np.zeros((len(pairs), 2), dtype=np.int64)
    rep = pairs[first]
    rx, ry = rot[first, 0], rot[first, 1]
    Xs = _rolled(corners[rep[:, 0]], rx)
    Ys = _rolled(corners[rep[:, 1]], ry)
    logger.info("integrating %d pair classes for %d pairs", len(rep), len(pairs))
    kmin_r, vals_r, status = _integrate_corners(Xs, Ys, dt, quad, jm)
    if np.any(status != 0):
        bad = np.isin(inverse, np.flatnonzero(status != 0))
        raise QuadratureError(pairs[bad])
    acc: list[sp.csr_matrix | None] = [None] * (jm + 1)
    step = 16 * _CHUNK
    for start in range(0, len(pairs), step):
        sl = slice(start, start + step)
        cls = inverse[sl]
        rows = _rolled(tri[pairs[sl, 0]], rot[sl, 0])
        cols = _rolled(tri[pairs[sl, 1]], rot[sl, 1])
        _scatter(acc, rows, cols, pairs[sl, 0] != pairs[sl, 1], kmin_r[cls], vals_r[cls], nn)
    blocks = []
    for j in range(jm + 1):
        m = acc[j] if acc[j] is not None else sp.csr_matrix((nn, nn))
        m = ((m + m.T) * 0.5).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        blocks.append(GalerkinBlock(lag=j, matrix=m))
    logger.info("assembled %d blocks for %d nodes (dt=%g), nnz=%d", jm + 1, nn, dt,
                sum(b.nnz for b in blocks))
    return BlockToeplitzOperator(dt=dt, n_nodes=nn, blocks=tuple(blocks))


def _scatter(acc, rows_l, cols_i, offdiag, kmin, vals, nn):
    """Add local pair matrices (and their mirror images) into per-lag CSR sums."""
    width = vals.shape[1]
    P = len(rows_l)
    R = np.broadcast_to(rows_l[:, :, None], (P, 3, 3))
    C = np.broadcast_to(cols_i[:, None, :], (P, 3, 3))
    offdiag = offdiag[:, None, None]
    for jj in range(width):
        lag = kmin + jj
        v = vals[:, jj]
        for j in np.unique(lag):
            if j < 0 or j >= len(acc):
                continue
            sel = lag == j
            vs = v[sel]
            nz = vs != 0.0
            if not nz.any():
                continue
            mirror = nz & offdiag[sel]
            rr = np.concatenate([R[sel][nz], C[sel][mirror]])
            cc = np.concatenate([C[sel][nz], R[sel][mirror]])
            dd = np.concatenate([vs[nz], vs[mirror]])
            m = sp.csr_matrix((dd, (rr, cc)), shape=(nn, nn))
            acc[j] = m if acc[j] is None else acc[j] + m


def assemble_block(mesh: SurfaceMesh, grid: TimeGrid | float, j: int,
                   quad: QuadratureConfig | None = None) -> GalerkinBlock:
    """Single lag block (computed with the same pair integrals as the full operator)."""
    if j < 0:
        raise ValueError("lag must be nonnegative")
    dt = grid.dt if isinstance(grid, TimeGrid) else float(grid)
    op = assemble_operator(mesh, dt, quad, j_max=max(j, j_max_for(mesh, dt)))
    return op.blocks[j]


# ----------------------------------------------------------------------
# right-hand side
# ----------------------------------------------------------------------
def assemble_rhs(mesh: SurfaceMesh, grid: TimeGrid, rhs_fn, n: int, order: int = 6) -> np.ndarray:
    """b_k^n = int_{I_n} int_G xi_k(x) dtf(t, x) dx dt by tensor Gauss quadrature.

    ``rhs_fn.dtf(t, X)`` must accept a scalar time and an (P, 3) point array.
    """
    if not 1 <= n <= grid.n_steps:
        raise ValueError(f"step {n} outside 1..{grid.n_steps}")
    bary, w = collapsed_gauss(order)
    tx, tw = gauss_legendre(order)
    pts = np.einsum("qv,tvc->tqc", bary, mesh.vertices[mesh.triangles])  # (T, Q, 3)
    flat = pts.reshape(-1, 3)
    vals = np.zeros(len(flat))
    t0 = (n - 1) * grid.dt
    for s, ws in zip(tx, tw):
        vals += ws * grid.dt * np.asarray(rhs_fn.dtf(t0 + s * grid.dt, flat), dtype=float)
    vals = vals.reshape(len(mesh.triangles), -1) * w[None, :] * mesh.areas[:, None]
    local = vals @ bary  # (T, 3)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


def assemble_rhs_all(mesh: SurfaceMesh, grid: TimeGrid, rhs_fn, order: int = 6) -> np.ndarray:
    """Right-hand sides for every step, shape (N_t, N_nodes)."""
    return np.stack([assemble_rhs(mesh, grid, rhs_fn, n, order) for n in range(1, grid.n_steps + 1)])


# ----------------------------------------------------------------------
# binary dump
# ----------------------------------------------------------------------
_MAGIC = b"TDBEMOP"
_VERSION = 1


def dump_operator(op: BlockToeplitzOperator, path) -> None:
    """Versioned binary: header (dt, N_nodes, J_max) then per-block COO triplets."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<BdqQ", _VERSION, op.dt, op.n_nodes, op.j_max))
        for blk in op.blocks:
            coo = blk.matrix.tocoo()
            fh.write(struct.pack("<qQ", blk.lag, coo.nnz))
            fh.write(coo.row.astype("<i8").tobytes())
            fh.write(coo.col.astype("<i8").tobytes())
            fh.write(coo.data.astype("<f8").tobytes())


def load_operator(path) -> BlockToeplitzOperator:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an operator dump")
        version, dt, nn, jm = struct.unpack("<BdqQ", fh.read(struct.calcsize("<BdqQ")))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported dump version {version}")
        blocks = []
        for _ in range(jm + 1):
            lag, nnz = struct.unpack("<qQ", fh.read(16))
            row = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
            col = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
            data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
            m = sp.csr_matrix((data, (row, col)), shape=(nn, nn))
            m.sort_indices()
            blocks.append(GalerkinBlock(lag=int(lag), matrix=m))
    return BlockToeplitzOperator(dt=dt, n_nodes=int(nn), blocks=tuple(blocks))
