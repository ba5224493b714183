import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from epirefine.errors import ParseError
from epirefine.geometry import CameraIntrinsics, exp_map
from epirefine.io import (
    SceneFile,
    encode_pfm,
    encode_pgm,
    format_intrinsics,
    format_pose,
    parse_intrinsics,
    parse_netpbm,
    parse_pfm,
    parse_pose_line,
    parse_poses,
    read_pfm,
    read_poses,
    write_pfm,
    write_poses,
)
from epirefine.synth import ACCEPTANCE_K, Plane, SceneSpec, acceptance_scene

finite_maps = hnp.arrays(
    np.float32,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
    elements=st.floats(allow_nan=False, allow_infinity=False, width=32),
)


@given(finite_maps)
def test_pfm_roundtrip_bit_identical(grid):
    back = parse_pfm(encode_pfm(grid))
    assert back.dtype == np.float32
    assert back.tobytes() == grid.tobytes()


def test_pfm_file_roundtrip(tmp_path):
    grid = np.random.default_rng(0).uniform(0.1, 80, (48, 160)).astype(np.float32)
    write_pfm(tmp_path / "d.pfm", grid)
    assert np.array_equal(read_pfm(tmp_path / "d.pfm"), grid)


def test_hand_built_pfm():
    # Little-endian (negative scale), rows stored bottom to top.
    values = np.arange(160 * 48, dtype="<f4")
    data = b"Pf\n160 48\n-1.0\n" + values.tobytes()
    grid = parse_pfm(data)
    assert grid.shape == (48, 160)
    assert grid[47, 0] == 0.0 and grid[47, 1] == 1.0
    assert grid[0, 0] == 160.0 * 47


def test_big_endian_pfm():
    data = b"Pf\n2 1\n1.0\n" + struct.pack(">ff", 1.5, -2.25)
    assert parse_pfm(data).tolist() == [[1.5, -2.25]]


def test_three_channel_pfm_rejected():
    with pytest.raises(ParseError, match="line 1"):
        parse_pfm(b"PF\n2 2\n-1.0\n" + bytes(48))


@pytest.mark.parametrize("data, where", [
    (b"Pf\n160 48\n-1.0\n" + bytes(10), "offset 15"),
    (b"Pf\n160\n-1.0\n", "line 2"),
    (b"Pf\n4 4\nabc\n", "line 3"),
    (b"Pf\n4 4\n0\n", "line 3"),
    (b"Pf\n4 4", "line 2"),
    (b"P5\n4 4\n-1\n", "line 1"),
])
def test_malformed_pfm_names_position(data, where):
    with pytest.raises(ParseError, match=where):
        parse_pfm(data)


def test_pfm_writer_rejects_multichannel():
    with pytest.raises(ParseError):
        encode_pfm(np.zeros((2, 2, 3)))


def test_identity_pose_line():
    pose = parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0")
    assert np.array_equal(pose.matrix, np.eye(4))


def test_pose_roundtrip_precision(tmp_path):
    rng = np.random.default_rng(5)
    poses = [exp_map(np.concatenate([rng.normal(size=3), rng.normal(scale=20, size=3)])) for _ in range(100)]
    write_poses(tmp_path / "p.txt", poses)
    back = read_poses(tmp_path / "p.txt")
    assert len(back) == 100
    assert max(np.abs(a.matrix - b.matrix).max() for a, b in zip(poses, back)) < 1e-15


@given(st.lists(st.floats(-3.0, 3.0), min_size=6, max_size=6))
def test_pose_line_roundtrip_property(twist):
    pose = exp_map(np.array(twist))
    assert np.abs(parse_pose_line(format_pose(pose)).matrix - pose.matrix).max() < 1e-15


def test_short_line_names_line_number():
    lines = ["1 0 0 0 0 1 0 0 0 0 1 0"] * 6 + ["1 0 0 0 0 1 0 0 0 0 1"]
    with pytest.raises(ParseError, match="line 7"):
        parse_poses("\n".join(lines))


def test_pose_tolerance():
    slightly_off = "1.0002 0 0 0 0 1 0 0 0 0 1 0"
    pose = parse_pose_line(slightly_off)
    assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-12
    with pytest.raises(ParseError, match="rotation"):
        parse_pose_line("1.01 0 0 0 0 1 0 0 0 0 1 0")
    with pytest.raises(ParseError):
        parse_pose_line("-1 0 0 0 0 1 0 0 0 0 1 0")  # reflection
    with pytest.raises(ParseError):
        parse_pose_line("1 0 0 x 0 1 0 0 0 0 1 0")


def test_blank_lines_skipped():
    assert len(parse_poses("\n1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 1 0 1 0 2 0 0 1 3\n")) == 2


def test_ascii_and_binary_pgm_agree():
    ascii_pgm = b"P2\n# comment\n3 2\n255\n0 128 255\n255 0 64\n"
    binary_pgm = b"P5 3 2 255\n" + bytes([0, 128, 255, 255, 0, 64])
    expected = np.array([[0, 128, 255], [255, 0, 64]]) / 255.0
    assert np.array_equal(parse_netpbm(ascii_pgm), expected)
    assert np.array_equal(parse_netpbm(binary_pgm), expected)


def test_ppm_channels():
    img = parse_netpbm(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    assert img.shape == (1, 2, 3)
    assert img[0, 0].tolist() == [1.0, 0.0, 0.0]


@given(hnp.arrays(np.float64, (5, 7), elements=st.floats(0.0, 1.0)))
def test_pgm16_roundtrip_quantization(image):
    back = parse_netpbm(encode_pgm(image))
    assert np.abs(back - image).max() <= 0.5 / 65535 + 1e-12


@pytest.mark.parametrize("data", [
    b"P4\n2 2\n",
    b"P5\n2 2\n255\n" + bytes(3),
    b"P2\n2 2\n255\n1 2 3\n",
    b"P2\n2 2\n10\n1 2 3 11\n",
    b"P5\n2",
])
def test_malformed_images(data):
    with pytest.raises(ParseError):
        parse_netpbm(data)


def test_intrinsics_roundtrip():
    K = CameraIntrinsics(718.856, 718.856, 607.1928, 185.2157, 1241, 376)
    assert parse_intrinsics(format_intrinsics(K)) == K
    assert parse_intrinsics("# kitti\n1 2 3 4 5 6 # tail\n") == CameraIntrinsics(1, 2, 3, 4, 5, 6)
    with pytest.raises(ParseError):
        parse_intrinsics("1 2 3 4")


def test_scene_file_roundtrip():
    sf = SceneFile(acceptance_scene(), ACCEPTANCE_K, (0.0, 2.0, 0.0), (0.3, 0.0, 0.0))
    back = SceneFile.loads(sf.dumps())
    assert back.scene == sf.scene and back.K == sf.K
    assert np.array_equal(back.pose.matrix, sf.pose.matrix)
    assert back.dumps() == sf.dumps()


def test_scene_file_normalizes_normals_and_background():
    text = "width=80\nheight=24\nfx=100\nfy=100\ncx=39.5\ncy=11.5\nbackground_depth=40\nplane = 0 0 2 5 noise 0.3\n"
    sf = SceneFile.loads(text)
    assert sf.scene.planes[0] == Plane((0.0, 0.0, 1.0), 5.0, "noise", 0.3)
    assert sf.scene.background_depth == 40.0
    assert np.array_equal(sf.pose.matrix, np.eye(4))


@pytest.mark.parametrize("text, match", [
    ("width=8\nheight=8\nfx=1\nfy=1\ncx=1\ncy=1\n", "no planes"),
    ("width=8\nheight=8\nfx=1\nfy=1\ncx=1\nplane=0 0 1 5 checker 1\n", "missing"),
    ("width=8\nheight=8\nfx=1\nfy=1\ncx=1\ncy=1\ncolor=red\nplane=0 0 1 5 checker 1\n", "line 7"),
    ("width=8\nwidth=8\nheight=8\nfx=1\nfy=1\ncx=1\ncy=1\nplane=0 0 1 5 checker 1\n", "duplicate"),
    ("width=8\nheight=8\nfx=1\nfy=1\ncx=1\ncy=1\nplane=0 0 1 5 wood 1\n", "texture"),
    ("width=8\nheight=8\nfx=1\nfy=1\ncx=1\ncy=1\nplane=0 0 0 5 checker 1\n", "normal"),
    ("width=eight\nheight=8\nfx=1\nfy=1\ncx=1\ncy=1\nplane=0 0 1 5 checker 1\n", "width"),
])
def test_scene_file_errors(text, match):
    with pytest.raises(ParseError, match=match):
        SceneFile.loads(text)


def test_scene_equality_is_structural():
    a = SceneSpec((Plane((0.0, 0.0, 1.0), 5.0),))
    b = SceneSpec((Plane((0.0, 0.0, 1.0), 5.0),))
    assert a == b
