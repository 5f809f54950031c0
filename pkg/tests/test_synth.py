import numpy as np
import pytest

from g4d.errors import BadConfig, InvalidValue, TimeOutOfRange
from g4d.mesh import SurfaceQuery
from g4d.motion import cyclic_weight
from g4d.render import RenderConfig, render
from g4d.synth import SynthConfig, bake_gaussians, generate_scene, gt_flow, render_gt_views
from g4d.model import flatten


@pytest.fixture(scope="module")
def translation_scene():
    return generate_scene({"motion": "translation", "resolution": 64, "segments": 16}, 3)


def test_bad_config():
    for bad in ({"motion": "dance"}, {"timestamps": 1}, {"views": 1}, {"scale": 0.0},
                {"nonsense": 1}, {"parts": 0}):
        with pytest.raises(BadConfig):
            generate_scene(bad, 0)


def test_config_round_trip():
    cfg = SynthConfig.from_dict({"motion": "rigid", "velocity": [0.2, 0, 0]})
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_translation_annotations(translation_scene):
    sc = translation_scene
    for t in range(sc.n_timestamps - 1):
        assert np.allclose(sc.motion_forward[t], [0.1, 0, 0], atol=1e-9)
    assert sc.motion_backward[0] is None and sc.motion_forward[-1] is None


def test_static_annotations():
    sc = generate_scene({"motion": "static", "timestamps": 3, "resolution": 32}, 0)
    assert np.all(sc.motion_forward[0] == 0) and np.all(sc.motion_backward[1] == 0)


@pytest.mark.parametrize("motion", ["rigid", "translation", "articulated-swing"])
def test_annotation_identity_exact(motion):
    sc = generate_scene({"motion": motion, "timestamps": 4, "resolution": 32}, 2)
    for t in range(sc.n_timestamps - 1):
        x, y = sc.meshes[t].vertices, sc.meshes[t + 1].vertices
        assert np.array_equal(x + sc.motion_forward[t], y)
        assert np.array_equal(y + sc.motion_backward[t + 1], x)


def test_unit_diameter_and_scale():
    for s in (1.0, 1.7):
        sc = generate_scene({"motion": "static", "scale": s, "resolution": 32}, 5)
        rest = sc.rest
        c = 0.5 * (rest.min(0) + rest.max(0))
        assert 2 * np.linalg.norm(rest - c, axis=1).max() == pytest.approx(1.0, rel=1e-12)
        v = sc.meshes[0].vertices
        ratio = np.linalg.norm(v[1:] - v[0], axis=1) / np.linalg.norm(rest[1:] - rest[0], axis=1)
        assert np.allclose(ratio, s, rtol=1e-6)


def test_cameras_reference_and_arc():
    sc = generate_scene({"views": 3, "resolution": 32}, 0)
    assert np.allclose(sc.cameras[0].translation, 0) and np.allclose(sc.cameras[0].rotation, [1, 0, 0, 0])
    centers = np.array([c.center for c in sc.cameras])
    target = sc.meshes[0].vertices.mean(0)
    a, b = centers[0] - target, centers[1] - target
    angle = np.degrees(np.arccos(a @ b / np.linalg.norm(a) / np.linalg.norm(b)))
    assert angle == pytest.approx(45.0, abs=3.0)


def test_determinism():
    cfg = {"motion": "articulated-swing", "resolution": 32}
    a, b = generate_scene(cfg, 11), generate_scene(cfg, 11)
    for ma, mb in zip(a.meshes, b.meshes):
        assert np.array_equal(ma.vertices, mb.vertices)
    fa, fb = bake_gaussians(a, 1).frame, bake_gaussians(b, 1).frame
    for key in ("position", "opacity", "color", "rotation", "scale", "valid"):
        assert getattr(fa, key).tobytes() == getattr(fb, key).tobytes()
    c = generate_scene(cfg, 12)
    assert not np.array_equal(a.meshes[1].vertices, c.meshes[1].vertices)


def test_density_quadruples_count():
    sc = generate_scene({"motion": "static", "resolution": 48}, 0)
    for seed_view in range(2):
        n1 = bake_gaussians(sc, 0, 1.0).frame.valid[seed_view].sum()
        n2 = bake_gaussians(sc, 0, 2.0).frame.valid[seed_view].sum()
        assert 0.8 * 4 <= n2 / n1 <= 1.2 * 4


def test_baked_positions_on_mesh(translation_scene):
    b = bake_gaussians(translation_scene, 1)
    f = b.frame
    pts = np.moveaxis(f.position, 1, -1)[f.valid[:, 0]].astype(np.float64)
    _, d, _, _ = SurfaceQuery(translation_scene.meshes[1]).query(pts)
    assert d.max() <= 1e-6


def test_baked_motion_matches_annotation():
    sc = generate_scene({"motion": "articulated-swing", "resolution": 48}, 4)
    b = bake_gaussians(sc, 1)
    face = b.face_id[0]
    sel = face >= 0
    m = sc.motion_forward[1]
    expected = sc.meshes[1].interpolate(m, face[sel], b.bary[0][sel])
    got = np.moveaxis(b.motions[0].forward, 0, -1)[sel]
    assert np.array_equal(got, expected.astype(np.float32))
    # at a vertex the blend is the vertex annotation itself
    vert = sc.meshes[1].interpolate(m, np.array([0]), np.array([[0.0, 0.0]]))
    assert np.array_equal(vert[0], m[sc.faces[0, 0]])


def test_bake_time_range(translation_scene):
    with pytest.raises(TimeOutOfRange):
        bake_gaussians(translation_scene, 5)
    with pytest.raises(TimeOutOfRange):
        gt_flow(translation_scene, 0, 0, "backward")
    with pytest.raises(InvalidValue):
        gt_flow(translation_scene, 1, 0, "sideways")


def test_gt_views_targets(translation_scene):
    b = bake_gaussians(translation_scene, 0)
    cfg = RenderConfig(64, 64)
    imgs = render_gt_views(b, b.cameras, cfg)
    again = render_gt_views(b, b.cameras, cfg)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(imgs, again))
    cloud = flatten(b.frame)
    for cam, ref in zip(b.cameras, imgs):
        assert np.abs(render(cloud, cam, cfg) - ref).max() <= 1e-5
    empty = b.frame.replace(valid=np.zeros_like(b.frame.valid))
    assert all(np.all(x == 1.0) for x in render_gt_views(empty, b.cameras[:1], cfg))


def test_static_flow_zero():
    sc = generate_scene({"motion": "static", "resolution": 32}, 0)
    f = gt_flow(sc, 1, 0, "backward")
    assert np.all(f.flow == 0) and f.valid.any()


def test_translation_flow_closed_form(translation_scene):
    # camera 0 is the reference frame, so the motion is purely along its x axis
    sc = translation_scene
    b = bake_gaussians(sc, 0)
    f = gt_flow(sc, 0, 0, "forward", baked=b)
    z = b.frame.position[0, 2].astype(np.float64)
    v = b.frame.valid[0, 0]
    cam = sc.cameras[0]
    assert np.abs(f.flow[0][v] - cam.fx * 0.1 / z[v]).max() <= 1e-3
    assert np.abs(f.flow[1][v]).max() <= 1e-9


def _covisible(f, bw):
    H, W = f.shape
    ys, xs = np.mgrid[0:H, 0:W]
    qx = np.floor(xs + f.flow[0] + 0.5).astype(int)
    qy = np.floor(ys + f.flow[1] + 0.5).astype(int)
    ok = f.valid & (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
    ok[ok] &= bw.valid[qy[ok], qx[ok]]
    return ok


def test_gt_flows_cyclic_weight():
    sc = generate_scene({"motion": "static", "resolution": 48}, 0)
    f, bw = gt_flow(sc, 0, 1, "forward"), gt_flow(sc, 1, 1, "backward")
    ok = _covisible(f, bw)
    assert ok.any() and np.all(cyclic_weight(f, bw).weights[0][ok] == 1.0)
    # subpixel flows on a pixel grid are only approximately inverse
    sc = generate_scene({"motion": "translation", "resolution": 128}, 0)
    f, bw = gt_flow(sc, 0, 0, "forward"), gt_flow(sc, 1, 0, "backward")
    w = cyclic_weight(f, bw).weights[0][_covisible(f, bw)]
    assert np.median(w) >= 0.99


def test_texture_grid_matches_flat_points():
    sc = generate_scene({"motion": "static", "resolution": 32}, 0)
    grid = np.random.default_rng(1).uniform(-0.5, 0.5, (5, 7, 3))
    assert np.array_equal(sc.texture(grid), sc.texture(grid.reshape(-1, 3)).reshape(5, 7, 3))
