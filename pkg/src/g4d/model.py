"""Shared data model: Gaussian frames and clouds, cameras, motion and flow rasters.

Attribute maps are float32 and channel-first. A frame stacks its views, so a
position map for ``V`` views has shape ``(V, 3, H, W)``. Everything is
read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import quat
from .errors import InvalidValue, NonFiniteValue, OpacityOutOfRange, ShapeMismatch

QUAT_TOL = 1e-6

_ALIASES = {
    "P": "position", "O": "opacity", "C": "color", "Q": "rotation", "S": "scale",
}
_CHANNELS = {"position": 3, "opacity": 1, "color": 3, "rotation": 4, "scale": 3}


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _require_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{name} contains non-finite values")


def _renormalize(q, axis):
    n = np.linalg.norm(q.astype(np.float64), axis=axis, keepdims=True)
    if np.any(n <= 1e-12):
        raise InvalidValue("rotation contains a zero quaternion")
    return (q / n).astype(np.float32)


class ViewMaps(NamedTuple):
    position: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianFrame:
    """Pixel-aligned Gaussian attribute maps for every view at one timestamp."""

    position: np.ndarray  # (V, 3, H, W)
    opacity: np.ndarray   # (V, 1, H, W)
    color: np.ndarray     # (V, 3, H, W)
    rotation: np.ndarray  # (V, 4, H, W)
    scale: np.ndarray     # (V, 3, H, W)
    valid: np.ndarray     # (V, 1, H, W) bool
    timestamp: int

    @property
    def n_views(self):
        return self.position.shape[0]

    @property
    def shape(self):
        return self.position.shape[2:]

    def view(self, i) -> ViewMaps:
        return ViewMaps(self.position[i], self.opacity[i], self.color[i],
                        self.rotation[i], self.scale[i], self.valid[i])

    def replace(self, **changes) -> "GaussianFrame":
        fields = dict(position=self.position, opacity=self.opacity, color=self.color,
                      rotation=self.rotation, scale=self.scale, valid=self.valid,
                      timestamp=self.timestamp)
        fields.update(changes)
        return _build_frame(**fields)


def _stack_views(maps, key):
    arrays = []
    for m in maps:
        if key in m:
            arrays.append(np.asarray(m[key]))
            continue
        short = [k for k, v in _ALIASES.items() if v == key][0]
        if short not in m:
            raise ShapeMismatch(f"missing attribute map {key!r}")
        arrays.append(np.asarray(m[short]))
    try:
        return np.stack(arrays).astype(np.float32)
    except ValueError as exc:
        raise ShapeMismatch(f"{key} maps differ in shape across views") from exc


def make_gaussian_frame(maps, valid_mask=None, timestamp=0) -> GaussianFrame:
    """Validate per-view attribute maps and assemble a frame.

    ``maps`` is either a sequence of per-view mappings (keys ``position`` or
    ``P`` and so on) or a single mapping of already stacked ``(V, C, H, W)``
    arrays. ``valid_mask`` may be per view ``(1, H, W)``/``(H, W)`` or stacked;
    ``None`` marks every pixel valid. Quaternions are renormalized.
    """
    if isinstance(maps, Mapping):
        stacked = {}
        for key in _CHANNELS:
            short = [k for k, v in _ALIASES.items() if v == key][0]
            arr = maps.get(key, maps.get(short))
            if arr is None:
                raise ShapeMismatch(f"missing attribute map {key!r}")
            stacked[key] = np.asarray(arr, dtype=np.float32)
    else:
        maps = list(maps)
        if not maps:
            raise ShapeMismatch("a frame needs at least one view")
        stacked = {key: _stack_views(maps, key) for key in _CHANNELS}
    return _build_frame(valid=valid_mask, timestamp=timestamp, **stacked)


def _build_frame(position, opacity, color, rotation, scale, valid, timestamp):
    position = np.asarray(position, dtype=np.float32)
    if position.ndim != 4 or position.shape[1] != 3:
        raise ShapeMismatch(f"position maps must be (V, 3, H, W), got {position.shape}")
    V, _, H, W = position.shape
    out = {"position": position}
    for key, arr in (("opacity", opacity), ("color", color), ("rotation", rotation), ("scale", scale)):
        arr = np.asarray(arr, dtype=np.float32)
        if arr.shape != (V, _CHANNELS[key], H, W):
            raise ShapeMismatch(f"{key} maps have shape {arr.shape}, expected {(V, _CHANNELS[key], H, W)}")
        out[key] = arr
    for key, arr in out.items():
        _require_finite(key, arr)
    if np.any(out["opacity"] < 0) or np.any(out["opacity"] > 1):
        raise OpacityOutOfRange("opacity must lie in [0, 1]")
    if np.any(out["scale"] <= 0):
        raise InvalidValue("scales must be strictly positive")
    if np.any(out["color"] < 0) or np.any(out["color"] > 1):
        raise InvalidValue("colors must lie in [0, 1]")
    rot = out["rotation"]
    norms = np.linalg.norm(rot.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > QUAT_TOL / 4):
        rot = _renormalize(rot, axis=1)
    out["rotation"] = rot

    if valid is None:
        valid = np.ones((V, 1, H, W), dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape == (V, H, W):
            valid = valid[:, None]
        elif valid.shape in ((H, W), (1, H, W)) and V == 1:
            valid = valid.reshape(1, 1, H, W)
        if valid.shape != (V, 1, H, W):
            raise ShapeMismatch(f"valid mask has shape {valid.shape}, expected {(V, 1, H, W)}")
    return GaussianFrame(**{k: _frozen(v) for k, v in out.items()},
                         valid=_frozen(valid), timestamp=int(timestamp))


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Flat, render-ready Gaussians with a ``(view, pixel, timestamp)`` tag each."""

    position: np.ndarray  # (N, 3) float32
    opacity: np.ndarray   # (N,)
    color: np.ndarray     # (N, 3)
    rotation: np.ndarray  # (N, 4)
    scale: np.ndarray     # (N, 3)
    source: np.ndarray    # (N, 3) int64

    def __len__(self):
        return self.position.shape[0]

    @classmethod
    def create(cls, position, opacity, color, rotation, scale, source=None):
        position = np.asarray(position, dtype=np.float32).reshape(-1, 3)
        n = position.shape[0]
        opacity = np.asarray(opacity, dtype=np.float32).reshape(-1)
        color = np.asarray(color, dtype=np.float32).reshape(-1, 3)
        rotation = np.asarray(rotation, dtype=np.float32).reshape(-1, 4)
        scale = np.asarray(scale, dtype=np.float32).reshape(-1, 3)
        if source is None:
            source = np.zeros((n, 3), dtype=np.int64)
            source[:, 1] = np.arange(n)
        source = np.asarray(source, dtype=np.int64).reshape(-1, 3)
        for name, arr in (("opacity", opacity), ("color", color), ("rotation", rotation),
                          ("scale", scale), ("source", source)):
            if arr.shape[0] != n:
                raise ShapeMismatch(f"{name} has {arr.shape[0]} entries, expected {n}")
        for name, arr in (("position", position), ("opacity", opacity), ("color", color),
                          ("rotation", rotation), ("scale", scale)):
            _require_finite(name, arr)
        if n:
            if opacity.min() < 0 or opacity.max() > 1:
                raise OpacityOutOfRange("opacity must lie in [0, 1]")
            if scale.min() <= 0:
                raise InvalidValue("scales must be strictly positive")
            if color.min() < 0 or color.max() > 1:
                raise InvalidValue("colors must lie in [0, 1]")
            norms = np.linalg.norm(rotation.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > QUAT_TOL / 4):
                rotation = _renormalize(rotation, axis=1)
        return cls(_frozen(position), _frozen(opacity), _frozen(color),
                   _frozen(rotation), _frozen(scale), _frozen(source))

    @classmethod
    def empty(cls):
        return cls.create(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)),
                          np.zeros((0, 4)), np.zeros((0, 3)))

    def take(self, idx) -> "GaussianCloud":
        return GaussianCloud(*(_frozen(a[idx]) for a in self._arrays()))

    def with_position(self, position) -> "GaussianCloud":
        position = np.asarray(position, dtype=np.float32)
        if position.shape != self.position.shape:
            raise ShapeMismatch("position array does not match the cloud")
        _require_finite("position", position)
        return GaussianCloud(_frozen(position), self.opacity, self.color,
                             self.rotation, self.scale, self.source)

    def _arrays(self):
        return (self.position, self.opacity, self.color, self.rotation, self.scale, self.source)


def concat(clouds: Sequence[GaussianCloud]) -> GaussianCloud:
    clouds = list(clouds)
    if not clouds:
        return GaussianCloud.empty()
    parts = zip(*(c._arrays() for c in clouds))
    return GaussianCloud(*(_frozen(np.concatenate(p)) for p in parts))


def flatten(frame: GaussianFrame) -> GaussianCloud:
    """One Gaussian per valid pixel per view, view-major then raster order."""
    V, _, H, W = frame.position.shape
    valid = frame.valid.reshape(V, H * W)
    views, pixels = np.nonzero(valid)

    def pick(a):
        c = a.shape[1]
        flat = a.reshape(V, c, H * W)
        return flat[views, :, pixels]

    source = np.stack([views, pixels, np.full_like(views, frame.timestamp)], axis=1).astype(np.int64)
    return GaussianCloud(
        _frozen(pick(frame.position)),
        _frozen(pick(frame.opacity)[:, 0]),
        _frozen(pick(frame.color)),
        _frozen(pick(frame.rotation)),
        _frozen(pick(frame.scale)),
        _frozen(source),
    )


def group_by_source(cloud: GaussianCloud, n_views, height, width):
    """Scatter a cloud back into per-view maps using its source tags.

    Returns a dict of stacked ``(V, C, H, W)`` maps (zeros where no Gaussian
    landed) plus the ``valid`` mask.
    """
    V, H, W = n_views, height, width
    views = cloud.source[:, 0]
    pixels = cloud.source[:, 1]
    if len(cloud) and (views.min() < 0 or views.max() >= V or pixels.min() < 0 or pixels.max() >= H * W):
        raise ShapeMismatch("source tags fall outside the requested grid")
    out = {}
    for key, arr in (("position", cloud.position), ("opacity", cloud.opacity[:, None]),
                     ("color", cloud.color), ("rotation", cloud.rotation), ("scale", cloud.scale)):
        grid = np.zeros((V, H * W, arr.shape[1]), dtype=np.float32)
        grid[views, pixels] = arr
        out[key] = grid.transpose(0, 2, 1).reshape(V, arr.shape[1], H, W)
    valid = np.zeros((V, H * W), dtype=bool)
    valid[views, pixels] = True
    out["valid"] = valid.reshape(V, 1, H, W)
    return out


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera, world-to-camera: ``x_cam = R(q) @ x_world + T``."""

    rotation: np.ndarray     # (4,) unit quaternion (w, x, y, z)
    translation: np.ndarray  # (3,)
    intrinsics: np.ndarray   # (3, 3)

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        T = np.asarray(self.translation, dtype=np.float64).reshape(3)
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        for name, a in (("rotation", q), ("translation", T), ("intrinsics", K)):
            _require_finite(name, a)
        n = np.linalg.norm(q)
        if n <= 1e-12:
            raise InvalidValue("camera rotation is a zero quaternion")
        if abs(n - 1.0) > QUAT_TOL / 4:
            q = q / n
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise InvalidValue("focal lengths must be positive")
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(T))
        object.__setattr__(self, "intrinsics", _frozen(K))

    @classmethod
    def from_params(cls, q, T, fx, fy, cx, cy):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(np.asarray(q, dtype=np.float64), np.asarray(T, dtype=np.float64), K)

    @property
    def R(self):
        return quat.to_matrix(self.rotation)

    @property
    def fx(self):
        return float(self.intrinsics[0, 0])

    @property
    def fy(self):
        return float(self.intrinsics[1, 1])

    @property
    def cx(self):
        return float(self.intrinsics[0, 2])

    @property
    def cy(self):
        return float(self.intrinsics[1, 2])

    @property
    def center(self):
        return -self.R.T @ self.translation

    def with_translation(self, T) -> "Camera":
        return Camera(self.rotation, np.asarray(T, dtype=np.float64), self.intrinsics)

    def scaled_intrinsics(self, factor) -> "Camera":
        """Camera for an image grid resized by ``factor`` (pixel centers at integers)."""
        K = self.intrinsics.copy()
        K[0, 0] *= factor
        K[1, 1] *= factor
        K[0, 2] = (K[0, 2] + 0.5) * factor - 0.5
        K[1, 2] = (K[1, 2] + 0.5) * factor - 0.5
        return Camera(self.rotation, self.translation, K)

    def to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.translation

    def project(self, points):
        """World points ``(..., 3)`` to pixel coordinates ``(..., 2)`` and depth."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z


CameraSet = Sequence[Camera]


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-pixel 3D displacements for one view at ``timestamp``.

    ``backward`` points toward ``timestamp - 1`` and ``forward`` toward
    ``timestamp + 1``; either may be ``None`` at the ends of a sequence.
    Units are scene units per frame interval.
    """

    backward: np.ndarray | None  # (3, H, W)
    forward: np.ndarray | None   # (3, H, W)
    view: int = 0
    timestamp: int = 0

    def __post_init__(self):
        shapes = set()
        for name in ("backward", "forward"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.asarray(a, dtype=np.float32)
            if a.ndim != 3 or a.shape[0] != 3:
                raise ShapeMismatch(f"{name} motion must be (3, H, W), got {a.shape}")
            _require_finite(f"{name} motion", a)
            shapes.add(a.shape)
            object.__setattr__(self, name, _frozen(a))
        if len(shapes) > 1:
            raise ShapeMismatch("backward and forward motion differ in shape")
        if not shapes:
            raise ShapeMismatch("a motion field needs at least one direction")

    @property
    def shape(self):
        a = self.backward if self.backward is not None else self.forward
        return a.shape[1:]

    def direction(self, which):
        if which in ("backward", 1):
            a = self.backward
        elif which in ("forward", 2):
            a = self.forward
        else:
            raise ValueError(f"unknown motion direction {which!r}")
        if a is None:
            raise ShapeMismatch(f"{which} motion is undefined at t={self.timestamp}")
        return a


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel 2D displacement ``(2, H, W)`` in pixels, x first."""

    flow: np.ndarray
    valid: np.ndarray | None = None  # (H, W) bool

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=np.float32)
        if f.ndim != 3 or f.shape[0] != 2:
            raise ShapeMismatch(f"flow must be (2, H, W), got {f.shape}")
        _require_finite("flow", f)
        v = self.valid
        v = np.ones(f.shape[1:], dtype=bool) if v is None else np.asarray(v, dtype=bool).reshape(f.shape[1:])
        object.__setattr__(self, "flow", _frozen(f))
        object.__setattr__(self, "valid", _frozen(v))

    @property
    def shape(self):
        return self.flow.shape[1:]


@dataclass(frozen=True, eq=False)
class WeightMap:
    weights: np.ndarray  # (1, H, W) in [0, 1]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim == 2:
            w = w[None]
        if w.ndim != 3 or w.shape[0] != 1:
            raise ShapeMismatch(f"weights must be (1, H, W), got {w.shape}")
        _require_finite("weights", w)
        if np.any(w < 0) or np.any(w > 1):
            raise InvalidValue("weights must lie in [0, 1]")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def shape(self):
        return self.weights.shape[1:]


def check_image(img, name="image"):
    """Validate a ``(3, H, W)`` image with values in [0, 1]; returns float32."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeMismatch(f"{name} must be (3, H, W), got {img.shape}")
    img = img.astype(np.float32, copy=False)
    _require_finite(name, img)
    return img
