import numpy as np
import pytest

from tdbem.mesh import build_icosphere, build_square_screen
from tdbem.mesh_io import MeshFormatError, read_off, write_off, write_vtk


def test_icosahedron_round_trip(tmp_path):
    mesh = build_icosphere(0)
    path = tmp_path / "ico.off"
    write_off(mesh, path)
    back = read_off(path, geometry="sphere")
    assert back.n_vertices == 12 and back.n_triangles == 20
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_comments_and_split_header(tmp_path):
    path = tmp_path / "t.off"
    path.write_text("OFF # header\n# counts follow\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n\n3 0 1 2\n")
    mesh = read_off(path)
    assert mesh.n_triangles == 1


@pytest.mark.parametrize("text,where", [
    ("", "line 1"),
    ("PLY\n", "line 1"),
    ("OFF\n3 x 0\n", "line 2"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n", "line 4"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", "line 6"),
    ("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n4 0 1 3 2\n", "line 7"),
    ("OFF\n3 1 0\n0 0 0\n1 zero 0\n0 1 0\n3 0 1 2\n", "line 4"),
])
def test_malformed_input_names_the_line(tmp_path, text, where):
    path = tmp_path / "bad.off"
    path.write_text(text)
    with pytest.raises(MeshFormatError, match=where):
        read_off(path)


def test_vtk_cell_data(tmp_path):
    mesh = build_square_screen(1)
    single = mesh.replace(triangles=mesh.triangles[:1], green_parent=None)
    path = tmp_path / "one.vtk"
    write_vtk(single, path, {"eta2": np.array([0.5])})
    text = path.read_text()
    assert "CELL_DATA 1" in text
    assert "SCALARS eta2 double 1" in text
    assert "\n0.5\n" in text
    with pytest.raises(ValueError):
        write_vtk(mesh, tmp_path / "x.vtk", {"eta2": np.ones(5)})
