import numpy as np
import pytest
from hypothesis import given, strategies as st

from g4d import quat
from g4d.errors import EmptyInput, ShapeMismatch
from g4d.mesh import SurfaceQuery, TriangleMesh, closest_points_bruteforce, raycast
from g4d.model import Camera
from g4d.synth import generate_scene


def random_mesh(rng, n=40):
    v = rng.normal(size=(n, 3))
    f = np.array([rng.choice(n, 3, replace=False) for _ in range(2 * n)])
    return TriangleMesh.create(v, f)


def test_validation():
    with pytest.raises(ShapeMismatch):
        TriangleMesh.create(np.zeros((3, 2)), [[0, 1, 2]])
    with pytest.raises(ShapeMismatch):
        TriangleMesh.create(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(EmptyInput):
        SurfaceQuery(TriangleMesh.create(np.zeros((3, 3)), np.zeros((0, 3), int)))


def test_vertex_and_face_cases():
    m = TriangleMesh.create([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    q = SurfaceQuery(m)
    _, d, _, _ = q.query([[1, 0, 0]])
    assert d[0] == 0.0
    c = np.array([1 / 3, 1 / 3, 0.0])
    pt, d, face, _ = q.query(c + [0, 0, 0.7])
    assert d[0] == pytest.approx(0.7, abs=1e-15) and np.allclose(pt[0], c)
    _, d, _, _ = q.query([[2, -1, 0]])  # vertex region of (1, 0, 0)
    assert d[0] == pytest.approx(np.sqrt(2))
    _, d, _, _ = q.query([[0.5, -2, 0]])  # edge region
    assert d[0] == pytest.approx(2.0)


@given(st.integers(0, 2 ** 32 - 1))
def test_accelerated_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng)
    pts = rng.normal(size=(200, 3)) * 1.5
    pt, d, face, bary = SurfaceQuery(mesh).query(pts)
    bpt, bd, _ = closest_points_bruteforce(pts, mesh)
    assert np.abs(d - bd).max() <= 1e-7
    assert np.all(d >= 0)
    # barycentrics reproduce the reported closest point
    assert np.allclose(mesh.interpolate(mesh.vertices, face, bary), pt, atol=1e-9)


def test_bruteforce_on_synth_mesh():
    mesh = generate_scene({"motion": "static", "segments": 12}, 1).meshes[0]
    pts = np.random.default_rng(0).uniform(-0.6, 0.6, (300, 3)) + mesh.vertices.mean(0)
    _, d, _, _ = SurfaceQuery(mesh).query(pts)
    _, bd, _ = closest_points_bruteforce(pts, mesh)
    assert np.abs(d - bd).max() <= 1e-7


@given(st.integers(0, 2 ** 32 - 1))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng)
    pts = rng.normal(size=(50, 3))
    R = quat.to_matrix(quat.normalize(rng.normal(size=4)))
    t = rng.normal(size=3) * 3
    _, d0, _, _ = SurfaceQuery(mesh).query(pts)
    _, d1, _, _ = SurfaceQuery(mesh.with_vertices(mesh.vertices @ R.T + t)).query(pts @ R.T + t)
    assert np.abs(d0 - d1).max() <= 1e-7


def test_raycast_plane_depth():
    # square at z = 2 covering the view
    mesh = TriangleMesh.create([[-5, -5, 2], [5, -5, 2], [5, 5, 2], [-5, 5, 2]], [[0, 1, 2], [0, 2, 3]])
    cam = Camera.from_params([1, 0, 0, 0], [0, 0, 0], 10, 10, 3.5, 3.5)
    face, bary, depth = raycast(mesh, cam, 8, 8)
    assert np.all(face >= 0) and np.allclose(depth, 2.0)
    hit = mesh.interpolate(mesh.vertices, face, bary)
    ys, xs = np.mgrid[0:8, 0:8]
    assert np.allclose(hit[..., 0], (xs - 3.5) * 2 / 10) and np.allclose(hit[..., 1], (ys - 3.5) * 2 / 10)
