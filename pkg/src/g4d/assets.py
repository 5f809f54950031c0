"""On-disk formats.

Binary files share one little-endian header::

    magic[4] | version u32 | kind u32 | endian marker u32 | ndim u32 | dims u32 * ndim

followed by a kind-specific payload. Readers check every length before
touching the payload and only ever raise :class:`AssetError` subclasses.

Magics: ``G4DA`` Gaussian frame, ``G4DR`` raster (motion, flow, weight),
``G4DI`` float image, ``G4DC`` Gaussian cloud, ``G4DM`` triangle mesh.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct

import numpy as np

from .errors import (AssetError, CorruptHeader, G4DError, InvalidValue, IoError, ParseError, ShapeMismatch,
                     TruncatedPayload, UnsupportedBitDepth, VersionUnsupported)
from .mesh import TriangleMesh
from .model import (Camera, FlowField, GaussianCloud, GaussianFrame, MotionField, WeightMap,
                    _frozen, make_gaussian_frame)

VERSION = 1
ENDIAN_MARK = 0x01020304
MAX_NDIM = 8
MAX_DIM = 1 << 28

KIND_FRAME = 1
KIND_MOTION = 1
KIND_FLOW = 2
KIND_WEIGHT = 3
KIND_IMAGE = 1
KIND_CLOUD = 1
KIND_MESH = 1

_FRAME_CHANNELS = (("position", 3), ("opacity", 1), ("color", 3), ("rotation", 4), ("scale", 3))


# --- low level -------------------------------------------------------------------

def _header(magic, kind, dims):
    dims = [int(d) for d in dims]
    return (magic + struct.pack("<IIII", VERSION, kind, ENDIAN_MARK, len(dims))
            + struct.pack(f"<{len(dims)}I", *dims))


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.off = 0

    def take(self, n, what="payload"):
        if n < 0 or self.off + n > len(self.data):
            raise TruncatedPayload(f"{what}: need {n} bytes at offset {self.off}, "
                                   f"file has {len(self.data)}")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def i64(self, what):
        return struct.unpack("<q", self.take(8, what))[0]

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        raw = self.take(dtype.itemsize * int(count), what)
        return np.frombuffer(raw, dtype=dtype).copy()

    def require(self, n, what):
        if self.off + n > len(self.data):
            raise TruncatedPayload(f"{what}: need {n} bytes, {len(self.data) - self.off} left")

    def finish(self):
        if self.off != len(self.data):
            raise CorruptHeader(f"{len(self.data) - self.off} unexpected trailing bytes")


def _read_header(data, magic, kinds):
    r = _Reader(data)
    got = bytes(r.take(4, "magic"))
    if got != magic:
        raise CorruptHeader(f"bad magic {got!r}, expected {magic!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionUnsupported(f"format version {version} (supported: {VERSION})")
    kind = r.u32("kind")
    if kind not in kinds:
        raise CorruptHeader(f"unknown payload kind {kind}")
    if r.u32("endian marker") != ENDIAN_MARK:
        raise CorruptHeader("bad endianness marker")
    ndim = r.u32("ndim")
    if ndim > MAX_NDIM:
        raise CorruptHeader(f"implausible rank {ndim}")
    dims = [r.u32("dims") for _ in range(ndim)]
    if any(d > MAX_DIM for d in dims):
        raise CorruptHeader(f"implausible dimension in {dims}")
    return r, kind, dims


def _load(path_or_stream):
    if hasattr(path_or_stream, "read"):
        return path_or_stream.read()
    try:
        with open(path_or_stream, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _save(path_or_stream, data):
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(data)
        return
    try:
        with open(path_or_stream, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _expect_dims(dims, n, what):
    if len(dims) != n:
        raise CorruptHeader(f"{what} header needs {n} dims, got {len(dims)}")


def _typed(fn):
    """Re-raise model validation errors from readers as asset errors."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AssetError:
            raise
        except G4DError as exc:
            raise CorruptHeader(f"payload failed validation: {exc}") from exc
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _pack_bits(mask):
    return np.packbits(np.asarray(mask, dtype=bool).reshape(-1), bitorder="little").tobytes()


def _unpack_bits(r, count, what):
    raw = r.array(np.uint8, (count + 7) // 8, what)
    return np.unpackbits(raw, count=count, bitorder="little").astype(bool)


# --- Gaussian frames ---------------------------------------------------------------

def write_gaussian_frame(frame: GaussianFrame, path_or_stream):
    V, _, H, W = frame.position.shape
    buf = io.BytesIO()
    buf.write(_header(b"G4DA", KIND_FRAME, (V, H, W)))
    buf.write(struct.pack("<q", frame.timestamp))
    for v in range(V):
        for name, _ in _FRAME_CHANNELS:
            buf.write(np.ascontiguousarray(getattr(frame, name)[v], dtype="<f4").tobytes())
    buf.write(_pack_bits(frame.valid))
    _save(path_or_stream, buf.getvalue())


@_typed
def read_gaussian_frame(path_or_stream) -> GaussianFrame:
    r, _, dims = _read_header(_load(path_or_stream), b"G4DA", {KIND_FRAME})
    _expect_dims(dims, 3, "frame")
    V, H, W = dims
    t = r.i64("timestamp")
    r.require(4 * 14 * V * H * W + (V * H * W + 7) // 8, "frame payload")
    maps = {name: np.empty((V, c, H, W), np.float32) for name, c in _FRAME_CHANNELS}
    for v in range(V):
        for name, c in _FRAME_CHANNELS:
            maps[name][v] = r.array("<f4", c * H * W, name).reshape(c, H, W)
    valid = _unpack_bits(r, V * H * W, "valid mask").reshape(V, 1, H, W)
    r.finish()
    frame = make_gaussian_frame(maps, valid, timestamp=t)
    # validation may renormalize quaternions; keep the stored bits
    return GaussianFrame(frame.position, frame.opacity, frame.color, _frozen(maps["rotation"]),
                         frame.scale, frame.valid, frame.timestamp)


# --- rasters -----------------------------------------------------------------------

def write_raster(field, path_or_stream):
    """Write a :class:`MotionField`, :class:`FlowField` or :class:`WeightMap`."""
    buf = io.BytesIO()
    if isinstance(field, MotionField):
        H, W = field.shape
        buf.write(_header(b"G4DR", KIND_MOTION, (2, 3, H, W)))
        present = int(field.backward is not None) | (int(field.forward is not None) << 1)
        buf.write(struct.pack("<Iqq", present, field.view, field.timestamp))
        for a in (field.backward, field.forward):
            if a is not None:
                buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    elif isinstance(field, FlowField):
        H, W = field.shape
        buf.write(_header(b"G4DR", KIND_FLOW, (2, H, W)))
        buf.write(np.ascontiguousarray(field.flow, dtype="<f4").tobytes())
        buf.write(_pack_bits(field.valid))
    elif isinstance(field, WeightMap):
        H, W = field.shape
        buf.write(_header(b"G4DR", KIND_WEIGHT, (1, H, W)))
        buf.write(np.ascontiguousarray(field.weights, dtype="<f4").tobytes())
    else:
        raise InvalidValue(f"cannot write {type(field).__name__} as a raster")
    _save(path_or_stream, buf.getvalue())


@_typed
def read_raster(path_or_stream):
    r, kind, dims = _read_header(_load(path_or_stream), b"G4DR", {KIND_MOTION, KIND_FLOW, KIND_WEIGHT})
    if kind == KIND_MOTION:
        _expect_dims(dims, 4, "motion")
        if dims[:2] != [2, 3]:
            raise CorruptHeader(f"motion dims {dims}")
        H, W = dims[2:]
        present = r.u32("presence flags")
        if present not in (1, 2, 3):
            raise CorruptHeader(f"bad motion presence flags {present}")
        view, t = r.i64("view"), r.i64("timestamp")
        parts = []
        for bit in (1, 2):
            parts.append(r.array("<f4", 3 * H * W, "motion").reshape(3, H, W) if present & bit else None)
        r.finish()
        return MotionField(parts[0], parts[1], view=view, timestamp=t)
    if kind == KIND_FLOW:
        _expect_dims(dims, 3, "flow")
        if dims[0] != 2:
            raise CorruptHeader(f"flow dims {dims}")
        H, W = dims[1:]
        flow = r.array("<f4", 2 * H * W, "flow").reshape(2, H, W)
        valid = _unpack_bits(r, H * W, "flow mask").reshape(H, W)
        r.finish()
        return FlowField(flow, valid)
    _expect_dims(dims, 3, "weights")
    if dims[0] != 1:
        raise CorruptHeader(f"weight dims {dims}")
    w = r.array("<f4", dims[1] * dims[2], "weights").reshape(1, dims[1], dims[2])
    r.finish()
    return WeightMap(w)


# --- images --------------------------------------------------------------------------

def write_image(img, path_or_stream):
    """Lossless float32 image ``(C, H, W)``."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ShapeMismatch(f"image must be (C, H, W), got {img.shape}")
    data = _header(b"G4DI", KIND_IMAGE, img.shape) + np.ascontiguousarray(img, dtype="<f4").tobytes()
    _save(path_or_stream, data)


@_typed
def read_image(path_or_stream):
    r, _, dims = _read_header(_load(path_or_stream), b"G4DI", {KIND_IMAGE})
    _expect_dims(dims, 3, "image")
    img = r.array("<f4", math.prod(dims), "pixels").reshape(dims)
    r.finish()
    return img


def write_png(img, path):
    """8-bit RGB PNG for viewing; values are clipped to [0, 1] and rounded."""
    from PIL import Image

    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] in (1, 3):
        img = np.moveaxis(img, 0, -1)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 2:
        q = np.repeat(q[..., None], 3, axis=-1)
    try:
        Image.fromarray(q, mode=None).convert("RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_png(path):
    """PNG to float32 ``(3, H, W)`` in [0, 1]; 8-bit L, RGB and RGBA only."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in ("L", "RGB", "RGBA"):
                raise UnsupportedBitDepth(f"unsupported PNG mode {mode!r}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except UnidentifiedImageError as exc:
        raise CorruptHeader(str(exc)) from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return np.moveaxis(arr / 255.0, -1, 0).astype(np.float32)


# --- clouds and meshes -------------------------------------------------------------------

def write_cloud(cloud: GaussianCloud, path_or_stream):
    n = len(cloud)
    cols = np.concatenate([cloud.position, cloud.opacity[:, None], cloud.color, cloud.rotation,
                           cloud.scale], axis=1).astype("<f4")
    data = (_header(b"G4DC", KIND_CLOUD, (n, 14)) + np.ascontiguousarray(cols).tobytes()
            + np.ascontiguousarray(cloud.source, dtype="<i8").tobytes())
    _save(path_or_stream, data)


@_typed
def read_cloud(path_or_stream) -> GaussianCloud:
    r, _, dims = _read_header(_load(path_or_stream), b"G4DC", {KIND_CLOUD})
    _expect_dims(dims, 2, "cloud")
    n, c = dims
    if c != 14:
        raise CorruptHeader(f"cloud has {c} columns, expected 14")
    cols = r.array("<f4", n * 14, "attributes").reshape(n, 14)
    source = r.array("<i8", n * 3, "source tags").reshape(n, 3)
    r.finish()
    checked = GaussianCloud.create(cols[:, 0:3], cols[:, 3], cols[:, 4:7], cols[:, 7:11],
                                   cols[:, 11:14], source)
    return GaussianCloud(checked.position, checked.opacity, checked.color,
                         _frozen(np.ascontiguousarray(cols[:, 7:11])), checked.scale, checked.source)


def write_mesh(mesh: TriangleMesh, path_or_stream):
    nv, nf = mesh.vertices.shape[0], mesh.faces.shape[0]
    ids = mesh.ids if mesh.ids is not None else np.arange(nv)
    data = (_header(b"G4DM", KIND_MESH, (nv, nf))
            + np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes()
            + np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes()
            + np.ascontiguousarray(ids, dtype="<i8").tobytes())
    _save(path_or_stream, data)


@_typed
def read_mesh(path_or_stream) -> TriangleMesh:
    r, _, dims = _read_header(_load(path_or_stream), b"G4DM", {KIND_MESH})
    _expect_dims(dims, 2, "mesh")
    nv, nf = dims
    verts = r.array("<f8", nv * 3, "vertices").reshape(nv, 3)
    faces = r.array("<i8", nf * 3, "faces").reshape(nf, 3)
    ids = r.array("<i8", nv, "vertex ids")
    r.finish()
    try:
        return TriangleMesh.create(verts, faces, ids)
    except (ValueError, IndexError) as exc:
        raise CorruptHeader(str(exc)) from exc


# --- PLY export ---------------------------------------------------------------------------

PLY_PROPERTIES = ("x", "y", "z", "opacity", "red", "green", "blue",
                  "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2")


def export_ply(cloud: GaussianCloud, path):
    """Binary little-endian PLY, one float32 vertex property per name in :data:`PLY_PROPERTIES`.

    Values are stored linearly: opacity and colors in [0, 1], rotation as a
    unit quaternion ``(w, x, y, z)``, scales in scene units.
    """
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")
    cols = np.concatenate([cloud.position, cloud.opacity[:, None], cloud.color, cloud.rotation,
                           cloud.scale], axis=1).astype("<f4")
    _save(path, ("\n".join(header) + "\n").encode("ascii") + np.ascontiguousarray(cols).tobytes())


# --- cameras (text) --------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_cameras(camera_sets, path_or_stream):
    """Write one camera set, or a sequence of sets (one per timestamp), as indented text."""
    sets = list(camera_sets)
    if sets and isinstance(sets[0], Camera):
        sets = [sets]
    lines = [f"version: {VERSION}"]
    for t, cams in enumerate(sets):
        lines.append(f"timestamp {t}:")
        for v, cam in enumerate(cams):
            lines.append(f"  view {v}:")
            lines.append("    q: " + " ".join(_fmt(x) for x in cam.rotation))
            lines.append("    T: " + " ".join(_fmt(x) for x in cam.translation))
            for key in ("fx", "fy", "cx", "cy"):
                lines.append(f"    {key}: {_fmt(getattr(cam, key))}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
        return
    try:
        with open(path_or_stream, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(str(exc)) from exc


_CAM_FIELDS = {"q": 4, "T": 3, "fx": 1, "fy": 1, "cx": 1, "cy": 1}


def _parse_floats(text, count, line_no, col0):
    values = []
    col = col0
    for tok in text.split(" "):
        if tok == "":
            col += 1
            continue
        try:
            val = float(tok)
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", line_no, col) from None
        if not np.isfinite(val):
            raise ParseError(f"non-finite value {tok!r}", line_no, col)
        values.append(val)
        col += len(tok) + 1
    if len(values) != count:
        raise ParseError(f"expected {count} values, found {len(values)}", line_no, col0)
    return values


def parse_cameras(text):
    """Parse camera text; returns a list (per timestamp) of lists of cameras."""
    sets, current, fields = [], None, None

    def close_view(line_no):
        nonlocal fields
        if fields is None:
            return
        missing = [k for k in _CAM_FIELDS if k not in fields]
        if missing:
            raise ParseError(f"view is missing {missing}", line_no, 1)
        fx, fy, cx, cy = (fields[k][0] for k in ("fx", "fy", "cx", "cy"))
        try:
            current.append(Camera.from_params(fields["q"], fields["T"], fx, fy, cx, cy))
        except (G4DError, ValueError) as exc:
            raise ParseError(str(exc), fields["_line"], 1) from None
        fields = None

    lines = text.split("\n")
    saw_version = False
    for i, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        indent = len(line) - len(line.lstrip(" "))
        body = line.strip()
        if ":" not in body:
            raise ParseError("expected 'key: value'", i, indent + 1)
        key, _, value = body.partition(":")
        vcol = indent + len(key) + 2 + (len(value) - len(value.lstrip(" ")))
        value = value.strip()
        if not saw_version:
            if key != "version":
                raise ParseError("file must start with 'version:'", i, indent + 1)
            if value != str(VERSION):
                raise ParseError(f"unsupported version {value!r}", i, vcol)
            saw_version = True
        elif key.startswith("timestamp ") and indent == 0:
            close_view(i)
            try:
                idx = int(key.split()[1])
            except (ValueError, IndexError):
                raise ParseError("bad timestamp index", i, indent + 11) from None
            if idx != len(sets):
                raise ParseError(f"timestamp {idx} out of order", i, indent + 11)
            current = []
            sets.append(current)
        elif key.startswith("view ") and indent == 2:
            close_view(i)
            if current is None:
                raise ParseError("view outside a timestamp", i, indent + 1)
            try:
                idx = int(key.split()[1])
            except (ValueError, IndexError):
                raise ParseError("bad view index", i, indent + 6) from None
            if idx != len(current):
                raise ParseError(f"view {idx} out of order", i, indent + 6)
            fields = {"_line": i}
        elif key in _CAM_FIELDS and indent == 4:
            if fields is None:
                raise ParseError(f"field {key!r} outside a view", i, indent + 1)
            if key in fields:
                raise ParseError(f"duplicate field {key!r}", i, indent + 1)
            fields[key] = _parse_floats(value, _CAM_FIELDS[key], i, vcol)
        else:
            raise ParseError(f"unexpected key {key!r}", i, indent + 1)
    if not saw_version:
        raise ParseError("empty camera file", 1, 1)
    close_view(len(lines))
    return sets


def read_cameras(path_or_stream):
    if hasattr(path_or_stream, "read"):
        text = path_or_stream.read()
    else:
        try:
            with open(path_or_stream, encoding="utf-8") as fh:
                text = fh.read()
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8 text: {exc.reason}", 1, 1) from None
        except OSError as exc:
            raise IoError(str(exc)) from exc
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8 text: {exc.reason}", 1, 1) from None
    return parse_cameras(text)


# --- manifests ------------------------------------------------------------------------------

def write_manifest(manifest: dict, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_manifest(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    except OSError as exc:
        raise IoError(str(exc)) from exc


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
