"""Dense motion: retargeting, constant-velocity warping, scene-flow projection,
cyclic flow consistency and the self-supervision losses built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue, ShapeMismatch, TimeOutOfRange
from .metrics import ssim
from .model import FlowField, GaussianCloud, GaussianFrame, MotionField, WeightMap, flatten
from .render import RenderConfig, render


@dataclass(frozen=True)
class LossWeights:
    ssim: float = 0.25
    lpips: float = 0.25

    def __post_init__(self):
        if not (self.ssim >= 0 and self.lpips >= 0):
            raise InvalidValue("loss weights must be non-negative")


@dataclass(frozen=True)
class FlowConsistencyParams:
    """``r = a * |mu| + b`` per pixel."""

    a: float = 0.1
    b: float = 0.5

    def __post_init__(self):
        if not (self.a >= 0 and self.b > 0):
            raise InvalidValue("need a >= 0 and b > 0")


def _direction(direction):
    if direction in ("backward", 1):
        return "backward", -1
    if direction in ("forward", 2):
        return "forward", 1
    raise InvalidValue(f"unknown motion direction {direction!r}")


def stack_motion(motions, direction, frame: GaussianFrame | None = None):
    """Per-view motion fields (or an already stacked array) as ``(V, 3, H, W)`` float32."""
    name, _ = _direction(direction)
    if isinstance(motions, MotionField):
        motions = [motions]
    if isinstance(motions, np.ndarray):
        m = np.asarray(motions, dtype=np.float32)
        if m.ndim == 3:
            m = m[None]
    else:
        m = np.stack([mf.direction(name) for mf in motions]).astype(np.float32, copy=False)
    if frame is not None and m.shape != frame.position.shape:
        raise ShapeMismatch(f"motion {m.shape} does not match frame {frame.position.shape}")
    return m


def retarget(frame: GaussianFrame, motions, direction="backward") -> GaussianFrame:
    """Move every Gaussian by its motion to the adjacent timestamp; other attributes kept."""
    name, step = _direction(direction)
    m = stack_motion(motions, name, frame)
    return frame.replace(position=frame.position + m, timestamp=frame.timestamp + step)


def _check_t_prime(t, t_prime):
    t_prime = float(t_prime)
    if not (t - 1 <= t_prime <= t) or not np.isfinite(t_prime):
        raise TimeOutOfRange(f"t'={t_prime} outside [{t - 1}, {t}]")
    return t_prime


def _shifted_cloud(frame: GaussianFrame, motion, factor) -> GaussianCloud:
    cloud = flatten(frame)
    if factor == 0.0:
        return cloud
    V, _, H, W = frame.position.shape
    views = cloud.source[:, 0]
    pixels = cloud.source[:, 1]
    m = motion.reshape(V, 3, H * W)[views, :, pixels]
    return cloud.with_position(cloud.position + np.float32(factor) * m)


def warp_to_time(frame_t: GaussianFrame, frame_tm1: GaussianFrame, motions_t, motions_tm1, t_prime):
    """Constant-velocity positions of both frames at ``t'`` in ``[t-1, t]``.

    ``motions_t`` holds the backward fields of frame ``t`` and ``motions_tm1``
    the forward fields of frame ``t - 1``; both are full one-frame
    displacements. Returns ``(cloud_from_t, cloud_from_tm1)``.
    """
    t = frame_t.timestamp
    t_prime = _check_t_prime(t, t_prime)
    m1 = stack_motion(motions_t, "backward", frame_t)
    m2 = stack_motion(motions_tm1, "forward", frame_tm1)
    a = _shifted_cloud(frame_t, m1, abs(t_prime - t))
    b = _shifted_cloud(frame_tm1, m2, abs(t_prime - (t - 1)))
    return a, b


def project_scene_flow(frame: GaussianFrame, motion, camera, view=0, direction="backward",
                       near=1e-6) -> FlowField:
    """2D flow of each pixel's Gaussian when moved by its 3D motion.

    Pixels whose start or end point is not in front of the camera, or that
    hold no Gaussian, are marked invalid (flow set to 0).
    """
    if isinstance(motion, MotionField):
        m = motion.direction(_direction(direction)[0])
    else:
        m = np.asarray(motion)
        if m.ndim == 4:
            m = m[view]
    P = frame.position[view].astype(np.float64)
    if m.shape != P.shape:
        raise ShapeMismatch(f"motion {m.shape} does not match positions {P.shape}")
    p0 = np.moveaxis(P, 0, -1)
    p1 = p0 + np.moveaxis(m.astype(np.float64), 0, -1)
    uv0, z0 = camera.project(p0)
    uv1, z1 = camera.project(p1)
    valid = frame.valid[view, 0] & (z0 > near) & (z1 > near)
    flow = np.where(valid[..., None], uv1 - uv0, 0.0)
    flow = np.nan_to_num(flow, nan=0.0, posinf=0.0, neginf=0.0)
    return FlowField(np.moveaxis(flow, -1, 0), valid)


def _lookup_nearest(field, x, y):
    """Sample ``field`` (C, H, W) at rounded ``(x, y)``; returns values and in-bounds mask."""
    H, W = field.shape[-2:]
    qx = np.floor(x + 0.5).astype(np.int64)
    qy = np.floor(y + 0.5).astype(np.int64)
    inside = (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
    qx = np.clip(qx, 0, W - 1)
    qy = np.clip(qy, 0, H - 1)
    return field[:, qy, qx], inside, (qy, qx)


def _lookup_bilinear(field, x, y):
    H, W = field.shape[-2:]
    inside = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xc = np.clip(x, 0, W - 1)
    yc = np.clip(y, 0, H - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = xc - x0
    fy = yc - y0
    out = (field[:, y0, x0] * (1 - fx) * (1 - fy) + field[:, y0, x1] * fx * (1 - fy)
           + field[:, y1, x0] * (1 - fx) * fy + field[:, y1, x1] * fx * fy)
    return out, inside, (np.where(fy < 0.5, y0, y1), np.where(fx < 0.5, x0, x1))


def cyclic_weight(fwd: FlowField, bwd: FlowField, params: FlowConsistencyParams | None = None,
                  interpolation="nearest") -> WeightMap:
    """``exp(-r |mu_fwd(p) + mu_bwd[p + mu_fwd(p)]|)`` with ``r = a |mu_fwd(p)| + b``.

    Lookups landing outside the image, or on pixels without a valid flow,
    get weight 0.
    """
    params = params or FlowConsistencyParams()
    if fwd.shape != bwd.shape:
        raise ShapeMismatch(f"flow shapes differ: {fwd.shape} vs {bwd.shape}")
    H, W = fwd.shape
    f = fwd.flow.astype(np.float64)
    b = bwd.flow.astype(np.float64)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    tx, ty = xs + f[0], ys + f[1]
    if interpolation == "nearest":
        back, inside, (qy, qx) = _lookup_nearest(b, tx, ty)
    elif interpolation == "bilinear":
        back, inside, (qy, qx) = _lookup_bilinear(b, tx, ty)
    else:
        raise InvalidValue(f"unknown interpolation {interpolation!r}")
    residual = np.sqrt(np.sum((f + back) ** 2, axis=0))
    r = params.a * np.sqrt(np.sum(f * f, axis=0)) + params.b
    w = np.exp(-r * residual)
    ok = inside & fwd.valid & bwd.valid[qy, qx]
    return WeightMap(np.where(ok, w, 0.0)[None])


def flow_loss(pred_flow: FlowField, pseudo_fwd: FlowField, pseudo_bwd: FlowField,
              params: FlowConsistencyParams | None = None, interpolation="nearest") -> float:
    """Cyclic-weighted sum over pixels of ``|mu_pseudo - mu_pred|``; invalid predictions skipped."""
    if not (pred_flow.shape == pseudo_fwd.shape == pseudo_bwd.shape):
        raise ShapeMismatch("flow shapes differ")
    w = cyclic_weight(pseudo_fwd, pseudo_bwd, params, interpolation).weights[0].astype(np.float64)
    diff = pseudo_fwd.flow.astype(np.float64) - pred_flow.flow.astype(np.float64)
    err = np.sqrt(np.sum(diff * diff, axis=0))
    return float(np.sum(np.where(pred_flow.valid, w * err, 0.0)))


# --- photometric losses ------------------------------------------------------

def photometric_loss(rendered, target, weights: LossWeights | None = None, lpips=None) -> dict:
    """``L2 + w_ssim (1 - SSIM) + w_lpips LPIPS`` for one image pair.

    L2 is the mean squared error over pixels and channels. ``lpips`` is an
    optional callable ``(a, b) -> float``; without it the term is 0.
    """
    weights = weights or LossWeights()
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    l2 = float(np.mean((a - b) ** 2))
    d_ssim = 1.0 - ssim(a, b) if weights.ssim > 0 else 0.0
    lp = float(lpips(a, b)) if (lpips is not None and weights.lpips > 0) else 0.0
    total = l2 + weights.ssim * d_ssim + weights.lpips * lp
    return {"l2": l2, "ssim": d_ssim, "lpips": lp, "total": total}


@dataclass
class LossReport:
    total: float
    per_view: list

    def term(self, name):
        return float(sum(v[name] for v in self.per_view))

    def as_dict(self):
        return {"total": self.total, "l2": self.term("l2"), "ssim": self.term("ssim"),
                "lpips": self.term("lpips"), "per_view": self.per_view}


def render_views(cloud: GaussianCloud, cameras, config: RenderConfig, renderer=None):
    renderer = renderer or render
    return [renderer(cloud, cam, config) for cam in cameras]


def retargeting_loss(frame_t: GaussianFrame, frame_tm1: GaussianFrame, motions, cameras,
                     weights: LossWeights | None = None, renderer=None,
                     config: RenderConfig | None = None, targets=None, lpips=None) -> LossReport:
    """Photometric loss between frame ``t`` moved back by its motion and frame ``t - 1``.

    Both sides are rendered from every camera. ``targets`` replaces the
    rendered ``t - 1`` images by captured ones.
    """
    cameras = list(cameras)
    if config is None:
        H, W = frame_t.shape
        config = RenderConfig(H, W)
    moved = flatten(retarget(frame_t, motions, "backward"))
    pred = render_views(moved, cameras, config, renderer)
    if targets is None:
        targets = render_views(flatten(frame_tm1), cameras, config, renderer)
    elif len(targets) != len(cameras):
        raise ShapeMismatch(f"{len(targets)} targets for {len(cameras)} cameras")
    per_view = [photometric_loss(p, g, weights, lpips) for p, g in zip(pred, targets)]
    return LossReport(float(sum(v["total"] for v in per_view)), per_view)
