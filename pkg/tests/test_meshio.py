"""OBJ and node/ele round trips and parse errors."""

import numpy as np
import pytest

from tacsim import MeshFormatError, load_mesh, save_mesh, surface_of, tetrahedralize_box, tetrahedralize_sphere


def test_obj_single_face(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert len(m.vertices) == 3
    assert len(m.triangles) == 1
    assert np.allclose(m.vertices[1], [1, 0, 0])


def test_obj_round_trip_sphere_surface(tmp_path):
    s = surface_of(tetrahedralize_sphere(0.005, 2))
    p = tmp_path / "s.obj"
    save_mesh(s, p)
    back = load_mesh(p)
    assert np.array_equal(back.triangles, s.triangles)
    assert np.max(np.abs(back.vertices - s.vertices)) < 1e-7


def test_obj_slashed_and_quad_faces(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    m = load_mesh(p)
    assert len(m.triangles) == 2  # fan-triangulated quad


def test_node_ele_round_trip(tmp_path):
    m = tetrahedralize_box((0.02, 0.02, 0.004), 3)
    save_mesh(m, tmp_path / "pad.node")
    back = load_mesh(tmp_path / "pad.ele")
    assert np.array_equal(back.tets, m.tets)
    assert np.max(np.abs(back.vertices - m.vertices)) < 1e-7
    assert len(back.vertices) == len(m.vertices)


def test_obj_parse_error_has_line_number(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 oops\n")
    with pytest.raises(MeshFormatError) as e:
        load_mesh(p)
    assert e.value.line == 4


def test_node_parse_error_has_line_number(tmp_path):
    (tmp_path / "m.node").write_text("2 3 0 0\n1 0 0 0\n2 bad 0 0\n")
    (tmp_path / "m.ele").write_text("0 4 0\n")
    with pytest.raises(MeshFormatError) as e:
        load_mesh(tmp_path / "m.node")
    assert e.value.line == 3


def test_node_ele_count_mismatch(tmp_path):
    (tmp_path / "m.node").write_text("3 3 0 0\n1 0 0 0\n2 1 0 0\n")
    (tmp_path / "m.ele").write_text("0 4 0\n")
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "m.node")
