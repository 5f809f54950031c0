"""Software Gaussian-splat rasterizer.

Two compositing paths share one projection step:

* :func:`render` bins splats into square tiles and composites each tile
  independently (parallel over tiles).
* :func:`render_reference` walks the depth-sorted splats and composites
  them straight into the image, with no binning. It is the oracle for
  :func:`render`.

Conventions follow common 3DGS practice: EWA projection with a 0.3 px^2
low-pass dilation, alpha capped at 0.99, contributions below 1/255 skipped,
and a per-pixel Mahalanobis cutoff (default 3 sigma). Pixel ``(x, y)`` has
its center at integer coordinates.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import InvalidValue, SingularCovariance
from .model import Camera, GaussianCloud

ALPHA_CAP = 0.99
ALPHA_FLOOR = 1.0 / 255.0
DILATION = 0.3
DET_EPS = 1e-12


numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def _apply_thread_cap():
    cap = os.environ.get("G4D_THREADS")
    if not cap:
        return
    try:
        n = int(cap)
    except ValueError:
        return
    if n >= 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


_apply_thread_cap()


@dataclass(frozen=True)
class RenderConfig:
    height: int
    width: int
    background: tuple = (1.0, 1.0, 1.0)
    near: float = 0.01
    cutoff: float = 3.0
    tile_size: int = 16

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidValue("image size must be at least 1x1")
        if not self.cutoff > 0:
            raise InvalidValue("cutoff must be positive")
        if self.tile_size < 1:
            raise InvalidValue("tile size must be positive")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3:
            raise InvalidValue("background must be an RGB triple")
        object.__setattr__(self, "background", bg)


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray  # (2,) pixels
    cov2d: np.ndarray   # (2, 2) pixels^2, dilated
    depth: float
    color: np.ndarray
    alpha_scale: float
    radius: float


@dataclass(frozen=True)
class Splats:
    """Projected cloud, struct-of-arrays. ``visible`` marks splats that survive culling."""

    mean2d: np.ndarray   # (N, 2)
    cov2d: np.ndarray    # (N, 3) as (a, b, c) for [[a, b], [b, c]]
    conic: np.ndarray    # (N, 3) inverse covariance, same layout
    depth: np.ndarray    # (N,)
    radius: np.ndarray   # (N,)
    alpha: np.ndarray    # (N,) min(0.99, opacity)
    color: np.ndarray    # (N, 3)
    visible: np.ndarray  # (N,) bool
    order: np.ndarray    # front-to-back order over visible splats


@njit(parallel=True, cache=True)
def _project_kernel(pos, rot, scl, Rc, Tc, fx, fy, cx, cy, near, cutoff, width, height,
                    mean2d, cov, conic, depth, radius, status):
    n = pos.shape[0]
    for i in prange(n):
        px = np.float64(pos[i, 0])
        py = np.float64(pos[i, 1])
        pz = np.float64(pos[i, 2])
        x = Rc[0, 0] * px + Rc[0, 1] * py + Rc[0, 2] * pz + Tc[0]
        y = Rc[1, 0] * px + Rc[1, 1] * py + Rc[1, 2] * pz + Tc[1]
        z = Rc[2, 0] * px + Rc[2, 1] * py + Rc[2, 2] * pz + Tc[2]
        depth[i] = z
        if not (z > near):
            status[i] = 1
            continue
        qw = np.float64(rot[i, 0])
        qx = np.float64(rot[i, 1])
        qy = np.float64(rot[i, 2])
        qz = np.float64(rot[i, 3])
        qn = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        G = np.empty((3, 3))
        G[0, 0] = 1 - 2 * (qy * qy + qz * qz)
        G[0, 1] = 2 * (qx * qy - qw * qz)
        G[0, 2] = 2 * (qx * qz + qw * qy)
        G[1, 0] = 2 * (qx * qy + qw * qz)
        G[1, 1] = 1 - 2 * (qx * qx + qz * qz)
        G[1, 2] = 2 * (qy * qz - qw * qx)
        G[2, 0] = 2 * (qx * qz - qw * qy)
        G[2, 1] = 2 * (qy * qz + qw * qx)
        G[2, 2] = 1 - 2 * (qx * qx + qy * qy)
        inv_z = 1.0 / z
        j00 = fx * inv_z
        j02 = -fx * x * inv_z * inv_z
        j11 = fy * inv_z
        j12 = -fy * y * inv_z * inv_z
        # rows of J @ Rc (2x3)
        a0 = j00 * Rc[0, 0] + j02 * Rc[2, 0]
        a1 = j00 * Rc[0, 1] + j02 * Rc[2, 1]
        a2 = j00 * Rc[0, 2] + j02 * Rc[2, 2]
        b0 = j11 * Rc[1, 0] + j12 * Rc[2, 0]
        b1 = j11 * Rc[1, 1] + j12 * Rc[2, 1]
        b2 = j11 * Rc[1, 2] + j12 * Rc[2, 2]
        ca = 0.0
        cb = 0.0
        cc = 0.0
        for k in range(3):
            s = np.float64(scl[i, k])
            s2 = s * s
            u = a0 * G[0, k] + a1 * G[1, k] + a2 * G[2, k]
            v = b0 * G[0, k] + b1 * G[1, k] + b2 * G[2, k]
            ca += u * u * s2
            cb += u * v * s2
            cc += v * v * s2
        ca += DILATION
        cc += DILATION
        cov[i, 0] = ca
        cov[i, 1] = cb
        cov[i, 2] = cc
        mx = fx * x * inv_z + cx
        my = fy * y * inv_z + cy
        mean2d[i, 0] = mx
        mean2d[i, 1] = my
        det = ca * cc - cb * cb
        if not (np.isfinite(det) and np.isfinite(mx) and np.isfinite(my)):
            status[i] = 3
            continue
        if det <= DET_EPS:
            status[i] = 2
            continue
        conic[i, 0] = cc / det
        conic[i, 1] = -cb / det
        conic[i, 2] = ca / det
        mid = 0.5 * (ca + cc)
        disc = mid * mid - det
        if disc < 0.0:
            disc = 0.0
        lam = mid + np.sqrt(disc)
        r = cutoff * np.sqrt(lam)
        radius[i] = r
        if mx + r < 0.0 or mx - r > width - 1 or my + r < 0.0 or my - r > height - 1:
            status[i] = 4
            continue
        status[i] = 0


def project_cloud(cloud: GaussianCloud, camera: Camera, config: RenderConfig) -> Splats:
    """Project every Gaussian; culled ones keep ``visible == False``."""
    n = len(cloud)
    mean2d = np.zeros((n, 2))
    cov = np.zeros((n, 3))
    conic = np.zeros((n, 3))
    depth = np.zeros(n)
    radius = np.zeros(n)
    status = np.zeros(n, dtype=np.int8)
    if n:
        _project_kernel(cloud.position, cloud.rotation, cloud.scale,
                        np.ascontiguousarray(camera.R), np.ascontiguousarray(camera.translation),
                        camera.fx, camera.fy, camera.cx, camera.cy, float(config.near),
                        float(config.cutoff), config.width, config.height,
                        mean2d, cov, conic, depth, radius, status)
    if np.any(status == 2):
        i = int(np.argmax(status == 2))
        raise SingularCovariance(f"projected covariance of Gaussian {i} is singular")
    alpha = np.minimum(ALPHA_CAP, cloud.opacity.astype(np.float64))
    visible = (status == 0) & (alpha >= ALPHA_FLOOR)
    idx = np.nonzero(visible)[0]
    src = cloud.source[idx]
    # ties in depth fall back to (timestamp, view, pixel)
    order = idx[np.lexsort((src[:, 1], src[:, 0], src[:, 2], depth[idx]))]
    return Splats(mean2d, cov, conic, depth, radius, alpha,
                  cloud.color.astype(np.float64), visible, order)


def project_gaussian(g: GaussianCloud, camera: Camera, config: RenderConfig, index=0):
    """Project one Gaussian of ``g``; returns a :class:`Splat2D` or ``None`` if culled."""
    s = project_cloud(g.take(np.array([index])), camera, config)
    if not s.visible[0]:
        return None
    a, b, c = s.cov2d[0]
    return Splat2D(s.mean2d[0].copy(), np.array([[a, b], [b, c]]), float(s.depth[0]),
                   s.color[0].copy(), float(s.alpha[0]), float(s.radius[0]))


@njit(cache=True)
def _pixel_bounds(mx, my, r, width, height):
    # conservative integer bbox of the cutoff ellipse, clipped to the image
    r = r * (1.0 + 1e-6) + 1e-6
    x0 = max(0.0, np.ceil(mx - r))
    x1 = min(width - 1.0, np.floor(mx + r))
    y0 = max(0.0, np.ceil(my - r))
    y1 = min(height - 1.0, np.floor(my + r))
    return int(x0), int(x1), int(y0), int(y1)


@njit(cache=True)
def _bin_splats(order, mean2d, radius, width, height, tile):
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    counts = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        x0, x1, y0, y1 = _pixel_bounds(mean2d[i, 0], mean2d[i, 1], radius[i], width, height)
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    lists = np.empty(offsets[-1], dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        x0, x1, y0, y1 = _pixel_bounds(mean2d[i, 0], mean2d[i, 1], radius[i], width, height)
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                t = ty * tiles_x + tx
                lists[fill[t]] = i
                fill[t] += 1
    return offsets, lists


@njit(parallel=True, cache=True)
def _raster_tiles(offsets, lists, mean2d, conic, radius, alpha, color, bg, cutoff2,
                  width, height, tile, out):
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for t in prange(tiles_x * tiles_y):
        tx0 = (t % tiles_x) * tile
        ty0 = (t // tiles_x) * tile
        tx1 = min(tx0 + tile, width) - 1
        ty1 = min(ty0 + tile, height) - 1
        tw = tx1 - tx0 + 1
        th = ty1 - ty0 + 1
        acc = np.zeros((th, tw, 3))
        trans = np.ones((th, tw))
        for k in range(offsets[t], offsets[t + 1]):
            i = lists[k]
            mx = mean2d[i, 0]
            my = mean2d[i, 1]
            x0, x1, y0, y1 = _pixel_bounds(mx, my, radius[i], width, height)
            x0 = max(x0, tx0)
            x1 = min(x1, tx1)
            y0 = max(y0, ty0)
            y1 = min(y1, ty1)
            A = conic[i, 0]
            B = conic[i, 1]
            C = conic[i, 2]
            o = alpha[i]
            for py in range(y0, y1 + 1):
                dy = py - my
                for px in range(x0, x1 + 1):
                    dx = px - mx
                    d2 = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
                    if d2 > cutoff2:
                        continue
                    a = o * np.exp(-0.5 * d2)
                    if a > ALPHA_CAP:
                        a = ALPHA_CAP
                    if a < ALPHA_FLOOR:
                        continue
                    ly = py - ty0
                    lx = px - tx0
                    w = a * trans[ly, lx]
                    acc[ly, lx, 0] += color[i, 0] * w
                    acc[ly, lx, 1] += color[i, 1] * w
                    acc[ly, lx, 2] += color[i, 2] * w
                    trans[ly, lx] *= 1.0 - a
        for ly in range(th):
            for lx in range(tw):
                for c in range(3):
                    out[c, ty0 + ly, tx0 + lx] = acc[ly, lx, c] + bg[c] * trans[ly, lx]


@njit(cache=True)
def _raster_reference(order, mean2d, conic, radius, alpha, color, bg, cutoff2,
                      width, height, windowed, out):
    acc = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for k in range(order.shape[0]):
        i = order[k]
        mx = mean2d[i, 0]
        my = mean2d[i, 1]
        if windowed:
            x0, x1, y0, y1 = _pixel_bounds(mx, my, radius[i], width, height)
        else:
            x0, x1, y0, y1 = 0, width - 1, 0, height - 1
        A = conic[i, 0]
        B = conic[i, 1]
        C = conic[i, 2]
        o = alpha[i]
        for py in range(y0, y1 + 1):
            dy = py - my
            for px in range(x0, x1 + 1):
                dx = px - mx
                d2 = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
                if d2 > cutoff2:
                    continue
                a = o * np.exp(-0.5 * d2)
                if a > ALPHA_CAP:
                    a = ALPHA_CAP
                if a < ALPHA_FLOOR:
                    continue
                w = a * trans[py, px]
                acc[py, px, 0] += color[i, 0] * w
                acc[py, px, 1] += color[i, 1] * w
                acc[py, px, 2] += color[i, 2] * w
                trans[py, px] *= 1.0 - a
    for py in range(height):
        for px in range(width):
            for c in range(3):
                out[c, py, px] = acc[py, px, c] + bg[c] * trans[py, px]


def render(cloud: GaussianCloud, camera: Camera, config: RenderConfig) -> np.ndarray:
    """Tile-binned render; returns a float32 ``(3, H, W)`` image."""
    s = project_cloud(cloud, camera, config)
    H, W = config.height, config.width
    out = np.empty((3, H, W), dtype=np.float32)
    offsets, lists = _bin_splats(s.order, s.mean2d, s.radius, W, H, config.tile_size)
    _raster_tiles(offsets, lists, s.mean2d, s.conic, s.radius, s.alpha, s.color,
                  np.asarray(config.background, dtype=np.float64), float(config.cutoff) ** 2,
                  W, H, config.tile_size, out)
    return out


def render_reference(cloud: GaussianCloud, camera: Camera, config: RenderConfig,
                     windowed=None) -> np.ndarray:
    """Unbinned render used as the oracle for :func:`render`.

    Every depth-sorted splat is tested against every pixel. For large clouds
    ``windowed=True`` restricts each splat to the bounding box of its cutoff
    ellipse, which cannot change the result; by default the window is used
    once the cloud exceeds 2000 splats.
    """
    s = project_cloud(cloud, camera, config)
    H, W = config.height, config.width
    if windowed is None:
        windowed = s.order.size > 2000
    out = np.empty((3, H, W), dtype=np.float32)
    _raster_reference(s.order, s.mean2d, s.conic, s.radius, s.alpha, s.color,
                      np.asarray(config.background, dtype=np.float64), float(config.cutoff) ** 2,
                      W, H, bool(windowed), out)
    return out
