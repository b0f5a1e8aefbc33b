"""OFF and legacy-VTK readers/writers for surface meshes."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import SurfaceMesh


class MeshFormatError(ValueError):
    """Malformed mesh file; the message carries the offending line number."""


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def read_off(path, geometry: str = "flat") -> SurfaceMesh:
    """Read an OFF file with triangular faces."""
    text = Path(path).read_text()
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshFormatError("line 1: empty file") from None
    tokens = header.split()
    if tokens[0] != "OFF":
        raise MeshFormatError(f"line {lineno}: expected 'OFF' header, got {tokens[0]!r}")
    tokens = tokens[1:]
    if not tokens:
        try:
            lineno, rest = next(lines)
        except StopIteration:
            raise MeshFormatError(f"line {lineno}: missing counts line") from None
        tokens = rest.split()
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
    except (ValueError, IndexError):
        raise MeshFormatError(f"line {lineno}: bad counts line {' '.join(tokens)!r}") from None

    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshFormatError(f"line {lineno}: expected {nv} vertices, got {i}") from None
        parts = line.split()
        try:
            verts[i] = [float(x) for x in parts[:3]]
            if len(parts) < 3:
                raise ValueError
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad vertex {line!r}") from None

    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshFormatError(f"line {lineno}: expected {nf} faces, got {i}") from None
        parts = line.split()
        try:
            k = int(parts[0])
            idx = [int(x) for x in parts[1:1 + k]]
        except (ValueError, IndexError):
            raise MeshFormatError(f"line {lineno}: bad face {line!r}") from None
        if k != 3 or len(idx) != 3:
            raise MeshFormatError(f"line {lineno}: only triangular faces are supported")
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshFormatError(f"line {lineno}: vertex index out of range")
        faces[i] = idx
    return SurfaceMesh(verts, faces, geometry=geometry)


def write_off(mesh: SurfaceMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def write_vtk(mesh: SurfaceMesh, path, cell_data: dict[str, np.ndarray] | None = None) -> None:
    """Legacy ASCII VTK polydata with optional per-triangle scalars."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ntdbem surface\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        fh.write(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        if cell_data:
            fh.write(f"CELL_DATA {mesh.n_triangles}\n")
            for name, values in cell_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (mesh.n_triangles,):
                    raise ValueError(f"cell data {name!r} needs one value per triangle")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{x:.17g}\n" for x in values)
