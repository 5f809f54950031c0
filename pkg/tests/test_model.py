import numpy as np
import pytest
from hypothesis import given, strategies as st

from g4d.errors import InvalidValue, NonFiniteValue, OpacityOutOfRange, ShapeMismatch
from g4d.model import (Camera, FlowField, GaussianCloud, MotionField, WeightMap, concat, flatten,
                       group_by_source, make_gaussian_frame)

from conftest import random_frame


def maps(V=4, H=8, W=8):
    return dict(P=np.zeros((V, 3, H, W)), O=np.full((V, 1, H, W), 0.5), C=np.full((V, 3, H, W), 0.2),
                Q=np.broadcast_to(np.array([1.0, 0, 0, 0])[None, :, None, None], (V, 4, H, W)),
                S=np.full((V, 3, H, W), 0.1))


def test_frame_constructor_shapes():
    f = make_gaussian_frame(maps(), timestamp=3)
    assert f.n_views == 4 and f.shape == (8, 8) and f.timestamp == 3
    assert f.valid.all()


def test_per_view_list_input_matches_stacked():
    m = maps(2, 3, 4)
    per_view = [{k: v[i] for k, v in m.items()} for i in range(2)]
    a = make_gaussian_frame(per_view)
    b = make_gaussian_frame(m)
    assert np.array_equal(a.position, b.position) and np.array_equal(a.rotation, b.rotation)


def test_opacity_out_of_range():
    m = maps()
    m["O"] = m["O"].copy()
    m["O"][1, 0, 2, 3] = 1.5
    with pytest.raises(OpacityOutOfRange):
        make_gaussian_frame(m)


def test_quaternion_normalized():
    m = maps(1, 2, 2)
    m["Q"] = m["Q"].copy()
    m["Q"][0, :, 1, 1] = [2, 0, 0, 0]
    f = make_gaussian_frame(m)
    assert np.array_equal(f.rotation[0, :, 1, 1], [1, 0, 0, 0])


@pytest.mark.parametrize("key", ["P", "O", "C", "Q", "S"])
def test_non_finite_rejected(key):
    m = maps(1, 2, 2)
    m[key] = m[key].copy()
    m[key][0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteValue):
        make_gaussian_frame(m)


def test_bad_scale_and_shape():
    m = maps(1, 2, 2)
    m["S"] = np.zeros_like(m["S"])
    with pytest.raises(InvalidValue):
        make_gaussian_frame(m)
    m = maps(1, 2, 2)
    m["C"] = np.zeros((1, 3, 2, 3))
    with pytest.raises(ShapeMismatch):
        make_gaussian_frame(m)


def test_frames_are_read_only():
    f = make_gaussian_frame(maps(1, 2, 2))
    with pytest.raises(ValueError):
        f.position[0, 0, 0, 0] = 1.0


def test_flatten_counts():
    valid = np.zeros((2, 1, 3, 3), bool)
    valid[0, 0, 0, :] = True
    valid[1, 0, 2, :] = True
    f = make_gaussian_frame(maps(2, 3, 3), valid, timestamp=5)
    c = flatten(f)
    assert len(c) == 6
    assert set(map(tuple, c.source.tolist())) == {(0, 0, 5), (0, 1, 5), (0, 2, 5),
                                                   (1, 6, 5), (1, 7, 5), (1, 8, 5)}
    empty = make_gaussian_frame(maps(2, 3, 3), np.zeros((2, 1, 3, 3), bool))
    assert len(flatten(empty)) == 0


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_flatten_group_round_trip(seed, density):
    rng = np.random.default_rng(seed)
    valid = rng.uniform(size=(2, 1, 4, 5)) < density
    f = random_frame(rng, 2, 4, 5, valid=valid)
    g = group_by_source(flatten(f), 2, 4, 5)
    assert np.array_equal(g["valid"], f.valid)
    for key in ("position", "opacity", "color", "rotation", "scale"):
        sel = np.broadcast_to(f.valid, getattr(f, key).shape)
        assert np.array_equal(g[key][sel], getattr(f, key)[sel])


@given(st.integers(0, 2 ** 32 - 1))
def test_stored_quaternions_unit(seed):
    rng = np.random.default_rng(seed)
    f = random_frame(rng, 1, 3, 3)
    n = np.linalg.norm(f.rotation.astype(np.float64), axis=1)
    assert np.all(np.abs(n - 1) <= 1e-6)


def test_cloud_validation_and_concat():
    c = GaussianCloud.create(np.zeros((2, 3)), [0.2, 0.3], np.zeros((2, 3)), [[2, 0, 0, 0]] * 2,
                             np.ones((2, 3)))
    assert np.array_equal(c.rotation, [[1, 0, 0, 0]] * 2)
    with pytest.raises(OpacityOutOfRange):
        GaussianCloud.create(np.zeros((1, 3)), [-0.1], np.zeros((1, 3)), [[1, 0, 0, 0]], np.ones((1, 3)))
    with pytest.raises(ShapeMismatch):
        GaussianCloud.create(np.zeros((2, 3)), [0.1], np.zeros((2, 3)), [[1, 0, 0, 0]] * 2, np.ones((2, 3)))
    assert len(concat([c, c, GaussianCloud.empty()])) == 4
    assert len(concat([])) == 0


def test_camera_validation_and_projection():
    cam = Camera.from_params([2, 0, 0, 0], [0, 0, 1], 100, 120, 10, 20)
    assert np.allclose(cam.rotation, [1, 0, 0, 0])
    uv, z = cam.project(np.array([[0.5, -0.5, 1.0]]))
    assert np.allclose(uv, [[100 * 0.25 + 10, -120 * 0.25 + 20]]) and np.allclose(z, 2.0)
    assert np.allclose(cam.center, [0, 0, -1])
    with pytest.raises(InvalidValue):
        Camera.from_params([1, 0, 0, 0], [0, 0, 0], 0.0, 1.0, 0, 0)


def test_scaled_intrinsics_keeps_pixel_grid():
    cam = Camera.from_params([1, 0, 0, 0], [0, 0, 0], 10, 10, 3.5, 3.5)  # 8x8 grid
    big = cam.scaled_intrinsics(2)  # 16x16 grid
    assert big.cx == 7.5 and big.fx == 20


def test_raster_types():
    with pytest.raises(ShapeMismatch):
        MotionField(None, None)
    with pytest.raises(ShapeMismatch):
        MotionField(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)))
    f = FlowField(np.zeros((2, 3, 4)))
    assert f.valid.all() and f.shape == (3, 4)
    with pytest.raises(InvalidValue):
        WeightMap(np.full((1, 2, 2), 1.5))
    with pytest.raises(NonFiniteValue):
        FlowField(np.full((2, 2, 2), np.inf))
