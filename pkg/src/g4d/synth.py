"""Deterministic synthetic 4D scenes with exact ground truth.

A scene is a puppet of primitive parts (capsule torso, sphere head, capsule
limbs) animated piecewise-rigidly and seen by a static ring of cameras. The
first camera is the coordinate reference. Vertex positions are snapped to a
2^-30 grid, so ``x[t] + m2[t] == x[t+1]`` holds exactly in float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import quat
from .errors import BadConfig, InvalidValue, TimeOutOfRange
from .mesh import TriangleMesh, first_hit_depth, raycast
from .model import Camera, FlowField, GaussianFrame, MotionField, flatten, make_gaussian_frame
from .render import RenderConfig, render_reference

MOTIONS = ("static", "rigid", "translation", "articulated-swing")
QUANTUM = 2.0 ** -30
DEPTH_BIAS = 1e-4


@dataclass(frozen=True)
class SynthConfig:
    parts: int = 6
    motion: str = "articulated-swing"
    timestamps: int = 3
    views: int = 4
    scale: float = 1.0               # meters per normalized unit
    resolution: int = 128
    velocity: tuple = (0.1, 0.0, 0.0)  # normalized units per frame, reference-camera axes
    spin_deg: float = 6.0            # rigid mode, degrees per frame about the vertical axis
    swing_deg: float = 30.0          # articulated mode amplitude
    swing_rate: float = 0.35         # articulated mode, radians per frame
    arc_deg: float = 45.0
    camera_distance: float = 2.5
    focal_factor: float = 1.5
    texture_frequency: float = 5.0
    segments: int = 24

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "velocity" in d:
            d["velocity"] = tuple(float(v) for v in d["velocity"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise BadConfig(str(exc)) from exc
        cfg.validate()
        return cfg

    def to_dict(self):
        d = asdict(self)
        d["velocity"] = list(self.velocity)
        return d

    def validate(self):
        if self.motion not in MOTIONS:
            raise BadConfig(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        if int(self.timestamps) < 2:
            raise BadConfig("need at least 2 timestamps")
        if int(self.views) < 2:
            raise BadConfig("need at least 2 views")
        if not 1 <= int(self.parts) <= 6:
            raise BadConfig("parts must be between 1 and 6")
        if not self.scale > 0:
            raise BadConfig("scale must be positive")
        if int(self.resolution) < 8:
            raise BadConfig("resolution must be at least 8")
        if len(self.velocity) != 3:
            raise BadConfig("velocity must have three components")
        if int(self.segments) < 6:
            raise BadConfig("segments must be at least 6")


# --- primitive meshes --------------------------------------------------------

def _capsule(radius, half_length, segments):
    """Capsule along +y (half_length 0 gives a sphere), poles on the axis."""
    n_lon = segments
    n_lat = max(segments // 2, 4)
    if n_lat % 2:
        n_lat += 1
    rings = []
    for j in range(1, n_lat):
        phi = np.pi * j / n_lat  # 0 at top pole
        y = radius * np.cos(phi)
        r = radius * np.sin(phi)
        rings.append((y, r))
    verts = [[0.0, radius + half_length, 0.0]]
    ring_rows = []
    for j, (y, r) in enumerate(rings):
        offs = []
        upper = j + 1 <= n_lat // 2
        # the equator ring is duplicated so the cylinder section has real height
        copies = [half_length, -half_length] if (j + 1 == n_lat // 2 and half_length > 0) else \
            [half_length if upper else -half_length]
        for shift in copies:
            start = len(verts)
            for i in range(n_lon):
                th = 2 * np.pi * i / n_lon
                verts.append([r * np.cos(th), y + shift, r * np.sin(th)])
            offs.append(start)
        ring_rows.extend(offs)
    verts.append([0.0, -radius - half_length, 0.0])
    bottom = len(verts) - 1
    faces = []
    first = ring_rows[0]
    for i in range(n_lon):
        faces.append([0, first + (i + 1) % n_lon, first + i])
    for a, b in zip(ring_rows[:-1], ring_rows[1:]):
        for i in range(n_lon):
            i1 = (i + 1) % n_lon
            faces.append([a + i, a + i1, b + i1])
            faces.append([a + i, b + i1, b + i])
    last = ring_rows[-1]
    for i in range(n_lon):
        faces.append([bottom, last + i, last + (i + 1) % n_lon])
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _look_at(position, target, up=(0.0, -1.0, 0.0)):
    """World-to-camera rotation for an OpenCV-style camera (x right, y down, z forward)."""
    z = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(z, -np.asarray(up, dtype=np.float64))
    x = -x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


class _Noise:
    """Seeded 3D value noise with smoothstep interpolation, three channels."""

    def __init__(self, rng, size=64):
        self.size = size
        self.perm = rng.permutation(size)
        self.values = rng.uniform(0.0, 1.0, (3, size))

    def _hash(self, i, j, k):
        p = self.perm
        n = self.size
        return p[(p[(p[i % n] + j) % n] + k) % n]

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        base = np.floor(x).astype(np.int64)
        f = x - base
        s = f * f * (3 - 2 * f)
        out = np.zeros(x.shape[:-1] + (3,))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    h = self._hash(base[..., 0] + dx, base[..., 1] + dy, base[..., 2] + dz)
                    w = ((s[..., 0] if dx else 1 - s[..., 0])
                         * (s[..., 1] if dy else 1 - s[..., 1])
                         * (s[..., 2] if dz else 1 - s[..., 2]))
                    out += w[..., None] * np.moveaxis(self.values[:, h], 0, -1)
        return out


@dataclass(eq=False)
class SynthScene:
    config: SynthConfig
    seed: int
    faces: np.ndarray
    part_of_vertex: np.ndarray
    rest: np.ndarray               # normalized rest vertices, stage frame
    cameras: list                  # static across time
    meshes: list                   # TriangleMesh per timestamp
    motion_backward: list          # per timestamp (V, 3) or None at t = 0
    motion_forward: list           # per timestamp (V, 3) or None at t = k-1
    _joints: np.ndarray = field(repr=False, default=None)
    _swing: np.ndarray = field(repr=False, default=None)
    _stage_to_ref: tuple = field(repr=False, default=None)
    _noise: _Noise = field(repr=False, default=None)

    @property
    def n_timestamps(self):
        return len(self.meshes)

    @property
    def scale(self):
        return self.config.scale

    def vertices_at(self, t):
        """Vertex positions at real time ``t`` (reference frame, scene meters)."""
        cfg = self.config
        x = self.rest.copy()
        if cfg.motion == "articulated-swing":
            for part in range(2, cfg.parts):
                amp, phase = self._swing[part]
                angle = amp * np.sin(cfg.swing_rate * t + phase)
                R = quat.to_matrix(quat.from_axis_angle([1.0, 0.0, 0.0], angle))
                sel = self.part_of_vertex == part
                j = self._joints[part]
                x[sel] = (x[sel] - j) @ R.T + j
        elif cfg.motion == "rigid":
            angle = np.deg2rad(cfg.spin_deg) * t
            R = quat.to_matrix(quat.from_axis_angle([0.0, 1.0, 0.0], angle))
            x = x @ R.T
        R0, T0 = self._stage_to_ref
        x = (x * cfg.scale) @ R0.T + T0
        if cfg.motion in ("rigid", "translation"):
            x = x + np.asarray(cfg.velocity) * cfg.scale * t
        return np.round(x / QUANTUM) * QUANTUM

    def mesh_at(self, t):
        if float(t).is_integer() and 0 <= t < self.n_timestamps:
            return self.meshes[int(t)]
        return TriangleMesh(self.vertices_at(t), self.faces, None)

    def texture(self, rest_points):
        x = rest_points * self.config.texture_frequency
        return 0.12 + 0.76 * self._noise(x)

    def camera(self, view, density=1.0):
        cam = self.cameras[view]
        return cam if density == 1.0 else cam.scaled_intrinsics(density)

    def grid_size(self, density=1.0):
        return int(round(self.config.resolution * density))


def generate_scene(config: SynthConfig | dict, seed: int = 0) -> SynthScene:
    if isinstance(config, dict):
        config = SynthConfig.from_dict(config)
    config.validate()
    rng = np.random.default_rng(seed)
    seg = int(config.segments)
    jitter = lambda: rng.uniform(0.9, 1.1)  # noqa: E731

    # stage frame: y points down, the puppet faces -z
    specs = [
        # (radius, half_length, joint, direction)
        (0.18 * jitter(), 0.25 * jitter(), np.array([0.0, -0.25, 0.0]), np.array([0.0, 1.0, 0.0])),
        (0.14 * jitter(), 0.0, np.array([0.0, -0.62, 0.0]), np.array([0.0, 1.0, 0.0])),
        (0.07 * jitter(), 0.2 * jitter(), np.array([-0.27, -0.38, 0.0]), np.array([-0.35, 1.0, 0.0])),
        (0.07 * jitter(), 0.2 * jitter(), np.array([0.27, -0.38, 0.0]), np.array([0.35, 1.0, 0.0])),
        (0.09 * jitter(), 0.26 * jitter(), np.array([-0.1, 0.42, 0.0]), np.array([-0.08, 1.0, 0.0])),
        (0.09 * jitter(), 0.26 * jitter(), np.array([0.1, 0.42, 0.0]), np.array([0.08, 1.0, 0.0])),
    ][: config.parts]

    verts, faces, owner, joints = [], [], [], []
    offset = 0
    for p, (radius, half, joint, direction) in enumerate(specs):
        v, f = _capsule(radius, half, seg)
        d = direction / np.linalg.norm(direction)
        if p == 0:
            center = np.zeros(3)
        elif p == 1:
            center = joint
        else:
            center = joint + d * (half + radius * 0.6)
        q = quat.from_two_vectors(np.array([0.0, 1.0, 0.0]), d)
        v = v @ quat.to_matrix(q).T + center
        verts.append(v)
        faces.append(f + offset)
        owner.append(np.full(len(v), p))
        joints.append(joint)
        offset += len(v)
    rest = np.concatenate(verts)
    faces = np.concatenate(faces)
    owner = np.concatenate(owner)
    joints = np.array(joints)

    lo, hi = rest.min(axis=0), rest.max(axis=0)
    c = 0.5 * (lo + hi)
    diameter = 2.0 * np.max(np.linalg.norm(rest - c, axis=1))
    rest = (rest - c) / diameter
    joints = (joints - c) / diameter

    swing = np.zeros((6, 2))
    amp = np.deg2rad(config.swing_deg)
    for p in range(2, 6):
        swing[p] = [amp * rng.uniform(0.7, 1.0) * (1 if p % 2 else -1), rng.uniform(-0.4, 0.4)]

    # cameras on a frontal arc around the puppet, then re-expressed in camera 0's frame
    n = int(config.views)
    D = config.camera_distance * config.scale
    angles = np.deg2rad(config.arc_deg) * (np.arange(n) - (n - 1) / 2.0)
    stage_R, stage_C = [], []
    for a in angles:
        pos = np.array([D * np.sin(a), 0.0, -D * np.cos(a)])
        stage_R.append(_look_at(pos, np.zeros(3)))
        stage_C.append(pos)
    R0, C0 = stage_R[0], stage_C[0]
    f = config.focal_factor * config.resolution
    cxy = (config.resolution - 1) / 2.0
    cameras = []
    for Rs, Cs in zip(stage_R, stage_C):
        R = Rs @ R0.T
        T = -Rs @ (Cs - C0)
        if len(cameras) == 0:
            R, T = np.eye(3), np.zeros(3)
        cameras.append(Camera.from_params(quat.from_matrix(R), T, f, f, cxy, cxy))
    stage_to_ref = (R0, -R0 @ C0)

    scene = SynthScene(config=config, seed=int(seed), faces=faces, part_of_vertex=owner,
                       rest=rest, cameras=cameras, meshes=[], motion_backward=[], motion_forward=[],
                       _joints=joints, _swing=swing, _stage_to_ref=stage_to_ref,
                       _noise=_Noise(rng))
    k = int(config.timestamps)
    xs = [scene.vertices_at(float(t)) for t in range(k)]
    ids = np.arange(rest.shape[0], dtype=np.int64)
    scene.meshes = [TriangleMesh(x, faces, ids) for x in xs]
    scene.motion_backward = [None] + [xs[t - 1] - xs[t] for t in range(1, k)]
    scene.motion_forward = [xs[t + 1] - xs[t] for t in range(k - 1)] + [None]
    return scene


# --- baking -------------------------------------------------------------------

@dataclass(eq=False)
class BakedFrame:
    frame: GaussianFrame
    motions: list          # MotionField per view; None when neither neighbor time exists
    cameras: list          # cameras matching the baked pixel grid
    face_id: np.ndarray    # (V, H, W), -1 on background
    bary: np.ndarray       # (V, H, W, 2)
    time: float


def _check_time(scene, t):
    if not (0.0 <= t <= scene.n_timestamps - 1):
        raise TimeOutOfRange(f"t={t} outside [0, {scene.n_timestamps - 1}]")


def bake_gaussians(scene: SynthScene, t, density=1.0, opacity=0.95, footprint=0.6) -> BakedFrame:
    """Pixel-aligned Gaussians sampled from the mesh surface at time ``t``.

    Each view casts one ray per pixel of a grid ``density`` times the scene
    resolution; a hit becomes a flat Gaussian oriented with the surface.
    Motion values are barycentric blends of the per-vertex annotations, so
    they are exact for piecewise-rigid parts. ``t`` may be fractional, in
    which case motions are displacements to ``t - 1`` and ``t + 1``.
    """
    t = float(t)
    _check_time(scene, t)
    k = scene.n_timestamps
    mesh = scene.mesh_at(t)
    x_now = mesh.vertices
    if t.is_integer():
        back = scene.motion_backward[int(t)]
        fwd = scene.motion_forward[int(t)]
    else:
        back = scene.vertices_at(t - 1) - x_now if t >= 1 else None
        fwd = scene.vertices_at(t + 1) - x_now if t <= k - 2 else None
    size = scene.grid_size(density)
    normals = mesh.face_normals()

    maps, masks, motions, cams, fids, barys = [], [], [], [], [], []
    for v in range(len(scene.cameras)):
        cam = scene.camera(v, density)
        face, bary, depth = raycast(mesh, cam, size, size)
        hit = face >= 0
        fsafe = np.where(hit, face, 0)
        pos = mesh.interpolate(x_now, fsafe, bary)
        rest = mesh.interpolate(scene.rest, fsafe, bary)
        color = scene.texture(rest)
        n = normals[fsafe]
        ray = pos - cam.center
        ray /= np.linalg.norm(ray, axis=-1, keepdims=True)
        cos = np.abs(np.sum(n * ray, axis=-1))
        spacing = np.where(hit, depth, 1.0) / cam.fx
        tangent = footprint * spacing / np.maximum(cos, 0.3)
        scale = np.stack([tangent, tangent, 0.1 * tangent], axis=-1)
        rot = quat.from_two_vectors(np.broadcast_to([0.0, 0.0, 1.0], n.shape), n)

        def chw(a, fill):
            a = np.where(hit[..., None], a, fill)
            return np.moveaxis(a, -1, 0)

        maps.append({
            "position": chw(pos, 0.0),
            "opacity": np.where(hit, opacity, 0.0)[None],
            "color": chw(color, 0.0),
            "rotation": chw(rot, np.array([1.0, 0.0, 0.0, 0.0])),
            "scale": chw(scale, 1e-3),
        })
        masks.append(hit[None])
        mb = chw(mesh.interpolate(back, fsafe, bary), 0.0) if back is not None else None
        mf = chw(mesh.interpolate(fwd, fsafe, bary), 0.0) if fwd is not None else None
        has_motion = mb is not None or mf is not None
        motions.append(MotionField(mb, mf, view=v, timestamp=int(round(t))) if has_motion else None)
        cams.append(cam)
        fids.append(face)
        barys.append(bary)
    frame = make_gaussian_frame(maps, np.stack(masks), timestamp=int(round(t)))
    return BakedFrame(frame, motions, cams, np.stack(fids), np.stack(barys), t)


def render_gt_views(frame, cameras, config: RenderConfig):
    """Reference-render ``frame`` (all views' Gaussians together) from each camera."""
    cloud = flatten(frame.frame if isinstance(frame, BakedFrame) else frame)
    return [render_reference(cloud, cam, config) for cam in cameras]


def gt_flow(scene: SynthScene, t, view, direction="backward", density=1.0, baked=None) -> FlowField:
    """Ground-truth optical flow of the baked samples of ``view`` at time ``t``.

    ``direction="backward"`` gives the flow toward ``t - 1``. Pixels without
    a sample, or whose surface point is hidden at the target time, are marked
    invalid.
    """
    if baked is None:
        baked = bake_gaussians(scene, t, density)
    if direction not in ("backward", "forward"):
        raise InvalidValue(f"direction must be 'backward' or 'forward', got {direction!r}")
    target = t - 1 if direction == "backward" else t + 1
    _check_time(scene, target)
    cam = baked.cameras[view]
    # exact positions from the mesh rather than the float32 maps
    face = baked.face_id[view]
    hit = face >= 0
    fsafe = np.where(hit, face, 0)
    mesh_now = scene.mesh_at(t)
    pos = mesh_now.interpolate(mesh_now.vertices, fsafe, baked.bary[view])
    mesh_tgt = scene.mesh_at(target)
    moved = mesh_tgt.interpolate(mesh_tgt.vertices, fsafe, baked.bary[view])
    uv0, _ = cam.project(pos)
    uv1, z1 = cam.project(moved)
    flow = np.where(hit[..., None], uv1 - uv0, 0.0)
    size = face.shape[0]
    visible = np.zeros_like(hit)
    if np.any(hit):
        buf, _, _ = raycast(mesh_tgt, cam, size, size)
        sel = np.nonzero(hit)
        hit_depth = first_hit_depth(mesh_tgt, cam, uv1[sel], face[sel], buf)
        inside = ((uv1[sel][:, 0] > -0.5) & (uv1[sel][:, 0] < size - 0.5)
                  & (uv1[sel][:, 1] > -0.5) & (uv1[sel][:, 1] < size - 0.5))
        visible[sel] = inside & (hit_depth >= z1[sel] - DEPTH_BIAS)
    return FlowField(np.moveaxis(flow, -1, 0), visible)


def source_positions(scene: SynthScene, baked: BakedFrame, t):
    """Positions at time ``t`` of the surface points sampled by ``baked`` (V, 3, H, W)."""
    mesh = scene.mesh_at(t)
    out = []
    for v in range(baked.face_id.shape[0]):
        face = baked.face_id[v]
        fsafe = np.where(face >= 0, face, 0)
        p = mesh.interpolate(mesh.vertices, fsafe, baked.bary[v])
        out.append(np.moveaxis(p, -1, 0))
    return np.stack(out)
