"""Image metrics, similarity alignment and the motion / geometry evaluation protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import quat
from .errors import (DegenerateConfiguration, EmptyCorrespondence, EmptyInput,
                     ImageTooSmall, InvalidValue, ShapeMismatch)
from .gauge import to_metric_points
from .mesh import SurfaceQuery, TriangleMesh

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for images in [0, 1]; ``inf`` when identical."""
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / m))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _as_chw(a):
    return a[None] if a.ndim == 2 else a


def ssim_map(a, b):
    """Per-pixel SSIM, (C, H, W). Borders use reflective padding."""
    a, b = _pair(a, b)
    a, b = _as_chw(a), _as_chw(b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs at least {SSIM_WINDOW} px per side, got {a.shape[-2:]}")
    g = gaussian_window()

    def blur(x):
        y = ndimage.correlate1d(x, g, axis=-1, mode="reflect")
        return ndimage.correlate1d(y, g, axis=-2, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    saa = blur(a * a) - mu_a ** 2
    sbb = blur(b * b) - mu_b ** 2
    sab = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    return float(np.mean(ssim_map(a, b).mean(axis=(-2, -1))))


# --- similarity alignment ----------------------------------------------------

@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray     # unit quaternion (w, x, y, z)
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(1.0, np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def R(self):
        return quat.to_matrix(self.rotation)

    def apply(self, x):
        return self.scale * (np.asarray(x, dtype=np.float64) @ self.R.T) + self.translation

    def apply_vector(self, v):
        """Transform displacement vectors (no translation)."""
        return self.scale * (np.asarray(v, dtype=np.float64) @ self.R.T)

    def inverse(self):
        Rt = self.R.T
        s = 1.0 / self.scale
        return SimilarityTransform(s, quat.from_matrix(Rt), -s * (Rt @ self.translation))

    def compose(self, other):
        """``self after other``."""
        R = self.R @ other.R
        return SimilarityTransform(self.scale * other.scale, quat.from_matrix(R),
                                   self.scale * (self.R @ other.translation) + self.translation)


def similarity_align(src, dst, weights=None) -> SimilarityTransform:
    """Least-squares ``s, R, t`` minimizing sum |s R x + t - y|^2 (Umeyama)."""
    x = np.asarray(src, dtype=np.float64)
    y = np.asarray(dst, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3) arrays, got {x.shape} and {y.shape}")
    if x.shape[0] < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    mx, my = w @ x, w @ y
    xc, yc = x - mx, y - my
    var_x = float(w @ np.sum(xc * xc, axis=1))
    cov = (yc * w[:, None]).T @ xc
    U, S, Vt = np.linalg.svd(cov)
    # rank check: collinear or coincident points leave rotation undetermined
    if var_x <= 1e-300 or S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateConfiguration("points are collinear or coincident")
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D) / var_x)
    t = my - s * (R @ mx)
    return SimilarityTransform(s, quat.from_matrix(R), t)


# --- correspondences ---------------------------------------------------------

@dataclass
class Correspondence:
    points: np.ndarray        # matched reference points (N, 3)
    distance: np.ndarray      # (N,)
    index: np.ndarray | None = None   # point targets
    face: np.ndarray | None = None    # mesh targets
    bary: np.ndarray | None = None

    def gather(self, values, mesh: TriangleMesh | None = None):
        """Reference-side per-point (or per-vertex) values at the matches."""
        values = np.asarray(values, dtype=np.float64)
        if self.index is not None:
            return values[self.index]
        return mesh.interpolate(values, self.face, self.bary)


def _points(a, name):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0:
        raise EmptyInput(f"{name} is empty")
    return a


def nearest_correspondence(pred, ref) -> Correspondence:
    """Closest reference point (point set) or exact closest surface point (mesh)."""
    pred = _points(pred, "query points")
    if isinstance(ref, TriangleMesh):
        if ref.faces.shape[0] == 0:
            raise EmptyInput("mesh has no faces")
        pts, dist, face, bary = SurfaceQuery(ref).query(pred)
        return Correspondence(pts, dist, face=face, bary=bary)
    ref = _points(ref, "reference points")
    dist, idx = cKDTree(ref).query(pred)
    return Correspondence(ref[idx], dist, index=idx)


def similarity_icp(src, mesh: TriangleMesh, init: SimilarityTransform | str | None = None,
                   iterations=50, tol=1e-12) -> SimilarityTransform:
    """Align ``src`` onto a mesh surface when no correspondences are known.

    ``init`` is a starting transform, ``"centroid"`` for a coarse centroid and
    radius match, or None for the identity.
    """
    src = _points(src, "source points")
    if init is None:
        T = SimilarityTransform.identity()
    elif isinstance(init, str):
        if init != "centroid":
            raise InvalidValue(f"unknown initialization {init!r}")
        T = similarity_align_centroids(src, mesh.vertices)
    else:
        T = init
    query = SurfaceQuery(mesh)
    prev = np.inf
    for _ in range(iterations):
        moved = T.apply(src)
        pts, dist, _, _ = query.query(moved)
        err = float(np.mean(dist ** 2))
        T = similarity_align(src, pts)
        if abs(prev - err) <= tol * max(err, 1.0):
            break
        prev = err
    return T


def similarity_align_centroids(src, dst):
    """Coarse initialization: match centroids and RMS radii, no rotation."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    rs = np.sqrt(np.mean(np.sum((src - ms) ** 2, axis=1)))
    rd = np.sqrt(np.mean(np.sum((dst - md) ** 2, axis=1)))
    s = rd / rs if rs > 0 else 1.0
    return SimilarityTransform(s, np.array([1.0, 0.0, 0.0, 0.0]), md - s * ms)


# --- motion protocols --------------------------------------------------------

def gt_motion_in_pred_frame(gt_motion, transform: SimilarityTransform):
    """Bring GT displacements into the predicted frame given ``y = s R x + t`` (pred -> GT)."""
    return np.asarray(gt_motion, dtype=np.float64) @ transform.R / transform.scale


def motion_error(pred_motion, gt_motion, correspondence: Correspondence | None = None,
                 transform: SimilarityTransform | None = None, mesh: TriangleMesh | None = None):
    """Mean L2 between predicted motion and matched GT motion.

    ``gt_motion`` holds per-reference values (vertices for mesh matches); when
    ``correspondence`` is None it must already be aligned with ``pred_motion``.
    """
    pred = np.asarray(pred_motion, dtype=np.float64).reshape(-1, 3)
    if pred.shape[0] == 0:
        raise EmptyCorrespondence("no matched points")
    gt = np.asarray(gt_motion, dtype=np.float64).reshape(-1, 3)
    if correspondence is not None:
        gt = correspondence.gather(gt, mesh)
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"{pred.shape} predicted vs {gt.shape} matched motions")
    if transform is not None:
        gt = gt_motion_in_pred_frame(gt, transform)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


@dataclass
class MotionEvaluation:
    motion_error: float
    retargeted_distance: float
    retargeted_distance_visible: float | None
    transform: SimilarityTransform
    n_points: int

    def as_dict(self):
        return {
            "motion_error": self.motion_error,
            "retargeted_distance": self.retargeted_distance,
            "retargeted_distance_visible": self.retargeted_distance_visible,
            "n_points": self.n_points,
            "align_scale": float(self.transform.scale),
        }


def evaluate_motion(pred_points, pred_motion, gt_mesh: TriangleMesh, gt_vertex_motion,
                    gt_mesh_target: TriangleMesh, transform: SimilarityTransform | None = None,
                    visible=None) -> MotionEvaluation:
    """Full protocol: align, match to the surface, compare motions, retarget distance."""
    pts = _points(pred_points, "predicted points")
    mot = np.asarray(pred_motion, dtype=np.float64).reshape(-1, 3)
    if transform is None:
        transform = similarity_icp(pts, gt_mesh)
    aligned = transform.apply(pts)
    corr = nearest_correspondence(aligned, gt_mesh)
    err = motion_error(mot, gt_vertex_motion, corr, transform, gt_mesh)
    moved = transform.apply(pts + mot)
    all_d, vis_d = retargeted_point_distance(moved, np.zeros_like(moved), gt_mesh_target,
                                             visible=visible, both=True)
    return MotionEvaluation(err, all_d, vis_d, transform, len(pts))


def retargeted_point_distance(pred_points, pred_motion, gt_mesh_at_target: TriangleMesh,
                              visible=None, both=False):
    """Mean distance of ``P + M`` to the target-time surface.

    Averaged over all points; with ``both=True`` also returns the mean over
    the ``visible`` subset (None when no mask is given).
    """
    pts = _points(pred_points, "predicted points")
    mot = np.asarray(pred_motion, dtype=np.float64).reshape(-1, 3)
    if mot.shape != pts.shape:
        raise ShapeMismatch(f"{pts.shape} points vs {mot.shape} motions")
    _, dist, _, _ = SurfaceQuery(gt_mesh_at_target).query(pts + mot)
    mean_all = float(dist.mean())
    if not both:
        return mean_all
    mean_vis = None
    if visible is not None:
        vis = np.asarray(visible, dtype=bool).reshape(-1)
        mean_vis = float(dist[vis].mean()) if vis.any() else None
    return mean_all, mean_vis


def metric_scale_error(pred_points, predicted_gauge, gt_mesh: TriangleMesh) -> float:
    """Mean distance (meters) of gauge-divided points to the GT mesh, no alignment."""
    metric = to_metric_points(pred_points, predicted_gauge)
    pts = _points(metric, "predicted points")
    _, dist, _, _ = SurfaceQuery(gt_mesh).query(pts)
    return float(dist.mean())
