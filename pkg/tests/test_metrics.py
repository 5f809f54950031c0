import numpy as np
import pytest
from hypothesis import given, strategies as st

from g4d import quat
from g4d.errors import (DegenerateConfiguration, EmptyCorrespondence, EmptyInput, ImageTooSmall,
                        NonPositiveGauge, ShapeMismatch)
from g4d.mesh import TriangleMesh, closest_points_bruteforce
from g4d.metrics import (SimilarityTransform, evaluate_motion, metric_scale_error, motion_error,
                         nearest_correspondence, psnr, retargeted_point_distance, similarity_align,
                         similarity_icp, ssim)
from g4d.synth import bake_gaussians, generate_scene


def naive_ssim(a, b, size=11, sigma=1.5):
    """Explicit sliding window with mirrored borders, one pixel at a time."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    win = np.outer(g, g) / np.outer(g, g).sum()
    r = size // 2
    C1, C2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ca, cb in zip(a, b):
        pa, pb = np.pad(ca, r, mode="symmetric"), np.pad(cb, r, mode="symmetric")
        H, W = ca.shape
        acc = 0.0
        for i in range(H):
            for j in range(W):
                wa, wb = pa[i:i + size, j:j + size], pb[i:i + size, j:j + size]
                ma, mb = (win * wa).sum(), (win * wb).sum()
                va = (win * wa * wa).sum() - ma * ma
                vb = (win * wb * wb).sum() - mb * mb
                cov = (win * wa * wb).sum() - ma * mb
                acc += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2))
        vals.append(acc / (H * W))
    return float(np.mean(vals))


# --- PSNR / SSIM -------------------------------------------------------------

def test_psnr_examples(rng):
    a = rng.uniform(0, 0.9, (3, 8, 8))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    b = rng.uniform(0, 1, (3, 8, 8))
    m = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / m), rel=1e-12)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ShapeMismatch):
        psnr(a, b[:, :4])


def test_ssim_identity_and_errors(rng):
    a = rng.uniform(0, 1, (3, 16, 16))
    assert abs(ssim(a, a) - 1.0) <= 1e-12
    with pytest.raises(ImageTooSmall):
        ssim(a[:, :10], a[:, :10])
    with pytest.raises(ShapeMismatch):
        ssim(a, a[:2])


def test_ssim_constant_closed_form():
    C1, C2 = 1e-4, 9e-4
    a, b = np.full((1, 12, 12), 0.3), np.full((1, 12, 12), 0.7)
    expected = (2 * 0.3 * 0.7 + C1) * C2 / ((0.09 + 0.49 + C1) * C2)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_naive_window(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (2, 14, 13))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert abs(ssim(a, b) - naive_ssim(a, b)) <= 1e-6
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


# --- similarity alignment ----------------------------------------------------

def test_align_trivial(rng):
    x = rng.normal(size=(20, 3))
    T = similarity_align(x, x)
    assert T.scale == pytest.approx(1) and np.allclose(T.R, np.eye(3)) and np.allclose(T.translation, 0)
    T = similarity_align(x, 2 * x + [1, 0, 0])
    assert T.scale == pytest.approx(2) and np.allclose(T.R, np.eye(3), atol=1e-12)
    assert np.allclose(T.translation, [1, 0, 0])


def test_align_degenerate():
    with pytest.raises(DegenerateConfiguration):
        similarity_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        similarity_align(line, line)


def random_similarity(rng):
    return SimilarityTransform(float(rng.uniform(0.2, 5)), quat.normalize(rng.normal(size=4)),
                               rng.normal(size=3) * 3)


@given(st.integers(0, 2 ** 32 - 1))
def test_align_recovers_random_similarity(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(50, 3))
    T = random_similarity(rng)
    R = similarity_align(x, T.apply(x))
    assert np.abs(R.apply(x) - T.apply(x)).max() <= 1e-6
    assert R.scale == pytest.approx(T.scale, rel=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_align_equivariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 3))
    y = random_similarity(rng).apply(x) + rng.normal(0, 0.01, x.shape)
    R0 = quat.to_matrix(quat.normalize(rng.normal(size=4)))
    a = similarity_align(x, y)
    b = similarity_align(x @ R0.T, y)
    assert np.allclose(b.R, a.R @ R0.T, atol=1e-9)
    assert b.scale == pytest.approx(a.scale, rel=1e-9)
    assert np.allclose(b.translation, a.translation, atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_similarity_inverse_compose(seed):
    rng = np.random.default_rng(seed)
    T = random_similarity(rng)
    I = T.compose(T.inverse())
    assert I.scale == pytest.approx(1, abs=1e-6)
    assert np.allclose(I.R, np.eye(3), atol=1e-6) and np.allclose(I.translation, 0, atol=1e-6)
    U = random_similarity(rng)
    x = rng.normal(size=(5, 3))
    assert np.allclose(T.compose(U).apply(x), T.apply(U.apply(x)))


# --- correspondences ---------------------------------------------------------

TRI = TriangleMesh.create([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def test_nearest_examples():
    c = nearest_correspondence([[0, 1, 0]], TRI)
    assert c.distance[0] == 0
    cen = np.array([1 / 3, 1 / 3, 0])
    c = nearest_correspondence(cen + [0, 0, 0.25], TRI)
    assert c.distance[0] == pytest.approx(0.25, abs=1e-15)
    c = nearest_correspondence([[0.1, 0, 0]], np.array([[0, 0, 0], [1, 0, 0]]))
    assert c.index[0] == 0 and c.distance[0] == pytest.approx(0.1)
    with pytest.raises(EmptyInput):
        nearest_correspondence(np.zeros((0, 3)), TRI)
    with pytest.raises(EmptyInput):
        nearest_correspondence([[0, 0, 0]], np.zeros((0, 3)))


def test_nearest_matches_bruteforce_on_synth():
    mesh = generate_scene({"motion": "static", "segments": 10, "resolution": 16}, 2).meshes[0]
    q = np.random.default_rng(1).normal(size=(200, 3)) * 0.4 + mesh.vertices.mean(0)
    c = nearest_correspondence(q, mesh)
    _, d, _ = closest_points_bruteforce(q, mesh)
    assert np.abs(c.distance - d).max() <= 1e-7


# --- motion error ------------------------------------------------------------

def test_motion_error_examples(rng):
    m = rng.normal(size=(40, 3))
    assert motion_error(m, m) == 0.0
    assert motion_error(m + [0.01, 0, 0], m) == pytest.approx(0.01, abs=1e-6)
    with pytest.raises(EmptyCorrespondence):
        motion_error(np.zeros((0, 3)), np.zeros((0, 3)))


def test_motion_error_rotates_gt_into_pred_frame(rng):
    # pred frame = GT frame mapped by the inverse similarity; GT motion must follow
    T = random_similarity(rng)
    gt_motion = rng.normal(size=(10, 3))
    pred_motion = T.inverse().apply_vector(gt_motion)
    assert motion_error(pred_motion, gt_motion, transform=T) <= 1e-12


@pytest.fixture(scope="module")
def swing():
    sc = generate_scene({"motion": "articulated-swing", "resolution": 64, "segments": 16}, 5)
    b = bake_gaussians(sc, 1)
    sel = b.frame.valid[:, 0]
    pts = np.moveaxis(b.frame.position, 1, -1)[sel].astype(np.float64)
    mot = np.moveaxis(np.stack([m.forward for m in b.motions]), 1, -1)[sel].astype(np.float64)
    return sc, pts, mot


def test_oracle_motion_end_to_end(swing):
    sc, pts, mot = swing
    ev = evaluate_motion(pts, mot, sc.meshes[1], sc.motion_forward[1], sc.meshes[2])
    assert ev.motion_error <= 1e-5
    assert ev.retargeted_distance <= 1e-5
    ev = evaluate_motion(pts, mot + [0.01, 0, 0], sc.meshes[1], sc.motion_forward[1], sc.meshes[2],
                         transform=SimilarityTransform.identity())
    assert ev.motion_error == pytest.approx(0.01, abs=1e-6)


def test_oracle_motion_in_foreign_frame(swing):
    """Predictions living in a scaled, rotated frame are compared after alignment."""
    sc, pts, mot = swing
    T = SimilarityTransform(0.5, quat.from_axis_angle([0, 1, 0], 0.02), np.array([0.01, 0, 0]))
    ev = evaluate_motion(T.apply(pts), T.apply_vector(mot), sc.meshes[1], sc.motion_forward[1],
                         sc.meshes[2], transform=T.inverse())
    assert ev.motion_error <= 1e-5 and ev.retargeted_distance <= 1e-5


def test_icp_recovers_mild_perturbation(swing):
    sc, pts, _ = swing
    sub = pts[np.random.default_rng(0).choice(len(pts), 400, replace=False)]
    T = SimilarityTransform(1.05, quat.from_axis_angle([0, 1, 0], 0.03), np.array([0.02, -0.01, 0]))
    R = similarity_icp(T.apply(sub), sc.meshes[1], init="centroid", iterations=100)
    assert np.abs(R.compose(T).apply(sub) - sub).max() <= 1e-3
    assert similarity_icp(pts, sc.meshes[1]).scale == pytest.approx(1.0, abs=1e-6)


def test_retargeted_distance(swing):
    sc, pts, mot = swing
    assert retargeted_point_distance(pts, mot, sc.meshes[2]) <= 1e-5
    # zero motion: mean distance of the unmoved points to the target surface
    _, d, _ = closest_points_bruteforce(pts, sc.meshes[2])
    assert retargeted_point_distance(pts, np.zeros_like(pts), sc.meshes[2]) == pytest.approx(d.mean(), abs=1e-9)
    assert retargeted_point_distance([[0.2, 0.2, 0]], [[0, 0, 0]], TRI) <= 1e-12
    vis = np.zeros(len(pts), bool)
    vis[:10] = True
    all_d, vis_d = retargeted_point_distance(pts, np.zeros_like(pts), sc.meshes[2], visible=vis, both=True)
    assert vis_d == pytest.approx(d[:10].mean(), abs=1e-9)
    with pytest.raises(EmptyInput):
        retargeted_point_distance(np.zeros((0, 3)), np.zeros((0, 3)), TRI)


def test_metric_scale_error(swing):
    sc, pts, _ = swing
    s = 1.8
    scaled = generate_scene({"motion": "articulated-swing", "resolution": 64, "segments": 16,
                             "scale": s}, 5)
    # the model predicts in normalized units; the gauge s maps meters into it
    assert metric_scale_error(pts * s * s, s, scaled.meshes[1]) <= 1e-4
    assert metric_scale_error([[0.2, 0.2, 0]], 1.0, TRI) <= 1e-12
    with pytest.raises(NonPositiveGauge):
        metric_scale_error(pts, 0.0, TRI)
