import numpy as np
import pytest
from helpers import uv_sphere

from bodyfit.errors import SchemaError
from bodyfit.geometry import RigidTransform
from bodyfit.io import (read_cloud, read_obj, read_ply, read_volume, read_xyz, volume_paths,
                        write_cloud, write_obj, write_ply, write_volume, write_xyz)
from bodyfit.pointcloud import PointCloud, ReflectivityVolume


def test_obj_round_trip_is_exact(tmp_path):
    mesh = uv_sphere(0.37, 12, 6)
    write_obj(mesh, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_obj_polygons_and_slashed_tokens(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    mesh = read_obj(p)
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])


@pytest.mark.parametrize("body,match", [
    ("v 0 0 0\nv 1 0 0\nf 1 2\n", ":3:"),
    ("v 0 0 x\n", ":1:"),
    ("", "no vertices"),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", "q.obj"),
])
def test_obj_errors_name_the_file(tmp_path, body, match):
    p = tmp_path / "q.obj"
    p.write_text(body)
    with pytest.raises(SchemaError, match=match):
        read_obj(p)


def test_missing_file_is_schema_error(tmp_path):
    with pytest.raises(SchemaError, match="nope.obj"):
        read_obj(tmp_path / "nope.obj")


def test_ply_round_trip_with_tags(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.normal(size=(25, 3)), np.where(rng.random(25) < 0.5, "front", "back"))
    write_ply(cloud, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_array_equal(back.source_panel, cloud.source_panel)


def test_ply_untagged_and_empty(tmp_path):
    write_ply(PointCloud(np.zeros((0, 3))), tmp_path / "e.ply")
    assert len(read_ply(tmp_path / "e.ply")) == 0
    write_cloud(PointCloud([[1.0, 2, 3]]), tmp_path / "u.ply")
    back = read_cloud(tmp_path / "u.ply")
    assert back.source_panel is None
    np.testing.assert_array_equal(back.points, [[1, 2, 3]])


@pytest.mark.parametrize("text,match", [
    ("hello\n", "not a PLY"),
    ("ply\nformat binary_little_endian 1.0\nend_header\n", "ASCII"),
    ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
     "property float z\nend_header\n0 0 0\n", "expected 2"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
     "end_header\n0 0\n", "'z' missing"),
])
def test_ply_errors(tmp_path, text, match):
    p = tmp_path / "bad.ply"
    p.write_text(text)
    with pytest.raises(SchemaError, match=match):
        read_ply(p)


def test_xyz_round_trip_and_errors(tmp_path):
    cloud = PointCloud(np.random.default_rng(1).normal(size=(9, 3)))
    write_xyz(cloud, tmp_path / "c.xyz")
    np.testing.assert_array_equal(read_xyz(tmp_path / "c.xyz").points, cloud.points)
    (tmp_path / "b.xyz").write_text("1 2 3\n4 5\n")
    with pytest.raises(SchemaError, match=":2:"):
        read_xyz(tmp_path / "b.xyz")
    with pytest.raises(SchemaError, match="format"):
        read_cloud(tmp_path / "c.las")
    with pytest.raises(SchemaError, match="format"):
        write_cloud(cloud, tmp_path / "c.las")


def test_volume_paths_accept_either_file():
    assert volume_paths("a/v.f32raw") == volume_paths("a/v.json") == volume_paths("a/v")


def test_volume_round_trip(tmp_path):
    values = np.random.default_rng(2).random((4, 5, 6)).astype(np.float32).astype(np.float64)
    pose = RigidTransform(np.diag([-1.0, 1.0, -1.0]), [0.1, 0.2, 0.3])
    vol = ReflectivityVolume(values, (0.01, 0.01, 0.02), (0.1, 0.2, 0.3), 2, pose, "back")
    write_volume(vol, tmp_path / "v")
    back = read_volume(tmp_path / "v.json")
    np.testing.assert_array_equal(back.values, values)
    assert back.spacing == vol.spacing
    assert back.panel_id == "back"
    np.testing.assert_array_equal(back.panel_pose.rotation, pose.rotation)
    # x varies fastest on disk
    raw = np.frombuffer((tmp_path / "v.f32raw").read_bytes(), dtype="<f4")
    assert raw[1] == np.float32(values[1, 0, 0])


def test_volume_errors(tmp_path):
    vol = ReflectivityVolume(np.zeros((3, 3, 3)), (0.01,) * 3)
    write_volume(vol, tmp_path / "v")
    (tmp_path / "v.json").rename(tmp_path / "w.json")
    with pytest.raises(SchemaError, match="v.json"):
        read_volume(tmp_path / "v.f32raw")
    (tmp_path / "w.json").rename(tmp_path / "v.json")
    (tmp_path / "v.f32raw").write_bytes(b"\0" * 8)
    with pytest.raises(SchemaError, match="expected 27"):
        read_volume(tmp_path / "v")
