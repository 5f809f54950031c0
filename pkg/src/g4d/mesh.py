"""Triangle meshes: nearest-surface queries and pinhole ray casting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .errors import EmptyInput, ShapeMismatch


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64
    ids: np.ndarray       # (V,) correspondence ids, stable across time

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ShapeMismatch(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ShapeMismatch(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise ShapeMismatch("face index out of range")
        ids = self.ids
        ids = np.arange(v.shape[0], dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != (v.shape[0],):
            raise ShapeMismatch("one correspondence id per vertex required")
        for name, a in (("vertices", v), ("faces", f), ("ids", ids)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def create(cls, vertices, faces, ids=None):
        return cls(vertices, faces, ids)

    def with_vertices(self, vertices):
        return TriangleMesh(vertices, self.faces, self.ids)

    def triangles(self):
        return self.vertices[self.faces]

    def face_normals(self):
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def face_areas(self):
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def interpolate(self, values, face, bary):
        """Barycentric interpolation of per-vertex ``values`` at surface samples."""
        values = np.asarray(values)
        idx = self.faces[face]
        w0 = 1.0 - bary[..., 0] - bary[..., 1]
        return (w0[..., None] * values[idx[..., 0]] + bary[..., 0, None] * values[idx[..., 1]]
                + bary[..., 1, None] * values[idx[..., 2]])


@njit(cache=True)
def _closest_on_triangle(p, a, b, c):
    # Voronoi-region walk; returns closest point and barycentric (v, w) on edges b, c
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a, 0.0, 0.0
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab, v, 0.0
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b), 1.0 - w, w
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w, v, w


@njit(parallel=True, cache=True)
def _closest_candidates(points, tri, offsets, cand, out_pt, out_d2, out_face, out_bary):
    for i in prange(points.shape[0]):
        p = points[i]
        best = np.inf
        for k in range(offsets[i], offsets[i + 1]):
            f = cand[k]
            q, v, w = _closest_on_triangle(p, tri[f, 0], tri[f, 1], tri[f, 2])
            d = p - q
            d2 = d @ d
            if d2 < best or (d2 == best and f < out_face[i]):
                best = d2
                out_pt[i] = q
                out_face[i] = f
                out_bary[i, 0] = v
                out_bary[i, 1] = w
        out_d2[i] = best


class SurfaceQuery:
    """Exact nearest-surface queries against a fixed mesh.

    Candidate triangles come from a k-d tree over face centroids: the
    distance to the triangle of the nearest centroid bounds the answer, so
    any triangle whose centroid lies farther than that bound plus the largest
    centroid-to-vertex radius cannot win.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.faces.shape[0] == 0:
            raise EmptyInput("mesh has no faces")
        self.mesh = mesh
        self.tri = np.ascontiguousarray(mesh.triangles())
        self.centroids = self.tri.mean(axis=1)
        self.reach = float(np.max(np.linalg.norm(self.tri - self.centroids[:, None], axis=2)))
        self.tree = cKDTree(self.centroids)

    def query(self, points):
        """Returns ``(closest_points, distances, face_ids, barycentrics)``."""
        points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        n = points.shape[0]
        if n == 0:
            raise EmptyInput("no query points")
        _, seed = self.tree.query(points)
        seed = np.asarray(seed, dtype=np.int64)
        pt = np.empty((n, 3))
        d2 = np.empty(n)
        face = np.full(n, -1, dtype=np.int64)
        bary = np.empty((n, 2))
        offsets = np.arange(n + 1, dtype=np.int64)
        _closest_candidates(points, self.tri, offsets, seed, pt, d2, face, bary)
        radii = np.sqrt(d2) + self.reach + 1e-12
        lists = self.tree.query_ball_point(points, radii, return_sorted=False)
        counts = np.fromiter((len(c) for c in lists), dtype=np.int64, count=n)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        cand = np.fromiter((f for c in lists for f in c), dtype=np.int64, count=int(offsets[-1]))
        face[:] = -1
        _closest_candidates(points, self.tri, offsets, cand, pt, d2, face, bary)
        return pt, np.sqrt(d2), face, bary


def closest_points_bruteforce(points, mesh: TriangleMesh, chunk=256):
    """All-triangle scan, written independently of :class:`SurfaceQuery`.

    For each triangle the query is projected onto its plane; if the foot is
    inside, that is the answer, otherwise the closest of the three edge
    segments is.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles()
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    best_pt = np.empty_like(points)
    best_d = np.empty(points.shape[0])
    best_f = np.empty(points.shape[0], dtype=np.int64)

    def seg(p, s0, s1):
        d = s1 - s0
        t = np.clip(np.sum((p - s0) * d, axis=-1) / np.sum(d * d, axis=-1), 0.0, 1.0)
        return s0 + t[..., None] * d

    for lo in range(0, points.shape[0], chunk):
        p = points[lo:lo + chunk, None, :]
        h = np.sum((p - a) * n, axis=-1)
        foot = p - h[..., None] * n
        # inside test via signed sub-areas
        s0 = np.sum(np.cross(b - a, foot - a) * n, axis=-1)
        s1 = np.sum(np.cross(c - b, foot - b) * n, axis=-1)
        s2 = np.sum(np.cross(a - c, foot - c) * n, axis=-1)
        inside = (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
        cands = np.stack([seg(p, a, b), seg(p, b, c), seg(p, c, a)], axis=0)
        dists = np.linalg.norm(cands - p[None], axis=-1)
        k = np.argmin(dists, axis=0)
        edge_pt = np.take_along_axis(cands, k[None, ..., None], axis=0)[0]
        q = np.where(inside[..., None], foot, edge_pt)
        d = np.linalg.norm(q - p, axis=-1)
        f = np.argmin(d, axis=1)
        rows = np.arange(d.shape[0])
        best_pt[lo:lo + chunk] = q[rows, f]
        best_d[lo:lo + chunk] = d[rows, f]
        best_f[lo:lo + chunk] = f
    return best_pt, best_d, best_f


@njit(cache=True)
def _raycast_kernel(cam_tri, fx, fy, cx, cy, width, height, near, face_id, bary, depth):
    for f in range(cam_tri.shape[0]):
        v0 = cam_tri[f, 0]
        v1 = cam_tri[f, 1]
        v2 = cam_tri[f, 2]
        if v0[2] <= near or v1[2] <= near or v2[2] <= near:
            continue
        umin = 1e300
        umax = -1e300
        vmin = 1e300
        vmax = -1e300
        for k in range(3):
            vk = cam_tri[f, k]
            u = fx * vk[0] / vk[2] + cx
            v = fy * vk[1] / vk[2] + cy
            umin = min(umin, u)
            umax = max(umax, u)
            vmin = min(vmin, v)
            vmax = max(vmax, v)
        x0 = max(0, int(np.ceil(umin - 1e-9)))
        x1 = min(width - 1, int(np.floor(umax + 1e-9)))
        y0 = max(0, int(np.ceil(vmin - 1e-9)))
        y1 = min(height - 1, int(np.floor(vmax + 1e-9)))
        if x0 > x1 or y0 > y1:
            continue
        e1 = v1 - v0
        e2 = v2 - v0
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                d = np.array([(px - cx) / fx, (py - cy) / fy, 1.0])
                pvec = np.cross(d, e2)
                det = e1 @ pvec
                if abs(det) < 1e-15:
                    continue
                inv = 1.0 / det
                tvec = -v0
                u = (tvec @ pvec) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qvec = np.cross(tvec, e1)
                v = (d @ qvec) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2 @ qvec) * inv
                if t <= near or t >= depth[py, px]:
                    continue
                depth[py, px] = t
                face_id[py, px] = f
                bary[py, px, 0] = u
                bary[py, px, 1] = v


def raycast(mesh: TriangleMesh, camera, height, width, near=1e-6):
    """Cast one ray per pixel center; nearest hit wins.

    Returns ``(face_id, bary, depth)`` with ``face_id == -1`` on misses.
    ``depth`` is the camera-space z of the hit.
    """
    cam_tri = np.ascontiguousarray(camera.to_camera(mesh.triangles()))
    face_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 2))
    depth = np.full((height, width), np.inf)
    _raycast_kernel(cam_tri, camera.fx, camera.fy, camera.cx, camera.cy, width, height,
                    near, face_id, bary, depth)
    return face_id, bary, depth


@njit(parallel=True, cache=True)
def _first_hit_kernel(cam_tri, dirs, cand_off, cand, out):
    for i in prange(dirs.shape[0]):
        d = dirs[i]
        best = np.inf
        for k in range(cand_off[i], cand_off[i + 1]):
            f = cand[k]
            v0 = cam_tri[f, 0]
            e1 = cam_tri[f, 1] - v0
            e2 = cam_tri[f, 2] - v0
            pvec = np.cross(d, e2)
            det = e1 @ pvec
            if abs(det) < 1e-15:
                continue
            inv = 1.0 / det
            tvec = -v0
            u = (tvec @ pvec) * inv
            if u < -1e-9 or u > 1.0 + 1e-9:
                continue
            qvec = np.cross(tvec, e1)
            v = (d @ qvec) * inv
            if v < -1e-9 or u + v > 1.0 + 1e-9:
                continue
            t = (e2 @ qvec) * inv
            if 0.0 < t < best:
                best = t
        out[i] = best


def first_hit_depth(mesh: TriangleMesh, camera, uv, own_face, face_buffer):
    """Depth of the first surface hit along the rays through subpixel ``uv``.

    Candidate triangles are the sample's own face plus every face visible at
    the 3x3 pixel neighbourhood of the rounded location in ``face_buffer``
    (a :func:`raycast` id map of the same mesh and camera).
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    H, W = face_buffer.shape
    n = uv.shape[0]
    cx = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    cy = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    cands = [np.asarray(own_face, dtype=np.int64).reshape(-1)]
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            x = np.clip(cx + dx, 0, W - 1)
            y = np.clip(cy + dy, 0, H - 1)
            cands.append(face_buffer[y, x])
    cand = np.stack(cands, axis=1)  # (n, 10), -1 for background
    counts = (cand >= 0).sum(axis=1)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = cand[cand >= 0]
    dirs = np.stack([(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy,
                     np.ones(n)], axis=1)
    cam_tri = np.ascontiguousarray(camera.to_camera(mesh.triangles()))
    out = np.empty(n)
    _first_hit_kernel(cam_tri, np.ascontiguousarray(dirs), offsets, flat, out)
    return out
