"""Occlusion-aware temporal fusion.

Gaussians of two adjacent frames are moved to an intermediate time. Pixels
whose motion lands on the matching Gaussian of the other frame form pairs and
get merged; the rest are treated as occluded and kept as they are.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import (CorruptHeader, InvalidValue, ShapeMismatch, TruncatedPayload,
                     VersionUnsupported, WeightFileMismatch)
from .model import FlowField, GaussianCloud, GaussianFrame, _frozen
from .motion import (LossReport, LossWeights, _check_t_prime, photometric_loss,
                     project_scene_flow, stack_motion)

DEFAULT_TAU = 0.05
FLOW_NEAR = 1e-6


@dataclass(frozen=True, eq=False)
class ConsistencyMap:
    """Per-pixel distance between a moved Gaussian and the one found at its flow target."""

    D: np.ndarray        # (1, H, W) float64, +inf where no match is possible
    target: np.ndarray   # (H, W) flat pixel index in the other frame, -1 when out of bounds
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidValue("tau must be positive")

    @property
    def occluded(self):
        return self.D[0] > self.tau


def _target_pixels(flow, H, W):
    ys, xs = np.mgrid[0:H, 0:W]
    qx = np.floor(xs + flow[0].astype(np.float64) + 0.5).astype(np.int64)
    qy = np.floor(ys + flow[1].astype(np.float64) + 0.5).astype(np.int64)
    inside = (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
    return np.where(inside, qy * W + qx, -1)


def dual_consistency(frame_src: GaussianFrame, frame_dst: GaussianFrame, motion, flow: FlowField,
                     view=0, direction="backward", tau=DEFAULT_TAU) -> ConsistencyMap:
    """``D(p) = |P_src(p) + M(p) - P_dst(round(p + flow(p)))|``.

    ``motion`` and ``flow`` carry the source frame toward the destination
    frame. Sources without a Gaussian, targets outside the image and targets
    without a Gaussian get ``D = inf``.
    """
    if frame_src.position.shape != frame_dst.position.shape:
        raise ShapeMismatch("frames differ in shape")
    H, W = frame_src.shape
    m = stack_motion(motion, direction, None)
    m = m[view] if m.shape[0] > 1 else m[0]
    if m.shape != (3, H, W) or flow.shape != (H, W):
        raise ShapeMismatch("motion or flow does not match the frame")
    target = _target_pixels(flow.flow, H, W)
    moved = (frame_src.position[view].astype(np.float64) + m.astype(np.float64)).reshape(3, -1)
    dst = frame_dst.position[view].astype(np.float64).reshape(3, -1)
    tq = np.maximum(target.reshape(-1), 0)
    D = np.sqrt(np.sum((moved - dst[:, tq]) ** 2, axis=0))
    ok = (target.reshape(-1) >= 0) & frame_src.valid[view, 0].reshape(-1) \
        & frame_dst.valid[view, 0].reshape(-1)[tq] & flow.valid.reshape(-1)
    D = np.where(ok, D, np.inf).reshape(1, H, W)
    return ConsistencyMap(D, target, float(tau))


def _cloud_from_pixels(frame: GaussianFrame, view_idx, pix_idx, position=None) -> GaussianCloud:
    V, _, H, W = frame.position.shape

    def pick(a):
        return a.reshape(V, a.shape[1], H * W)[view_idx, :, pix_idx]

    pos = pick(frame.position) if position is None else position
    source = np.stack([view_idx, pix_idx, np.full_like(view_idx, frame.timestamp)], axis=1)
    return GaussianCloud(_frozen(pos.astype(np.float32, copy=False)), _frozen(pick(frame.opacity)[:, 0]),
                         _frozen(pick(frame.color)), _frozen(pick(frame.rotation)),
                         _frozen(pick(frame.scale)), _frozen(source.astype(np.int64)))


def split_by_occlusion(frame: GaussianFrame, cmap: ConsistencyMap, tau=None, view=0):
    """Split one view into occluded Gaussians (``D > tau``) and matched ones.

    Returns ``(occluded, matched, pair_pixels)`` where ``pair_pixels`` gives,
    for each matched Gaussian, the flat pixel index of its counterpart.
    """
    tau = cmap.tau if tau is None else float(tau)
    if not tau > 0:
        raise InvalidValue("tau must be positive")
    valid = frame.valid[view, 0].reshape(-1)
    D = cmap.D[0].reshape(-1)
    occ = np.nonzero(valid & ~(D <= tau))[0]
    match = np.nonzero(valid & (D <= tau))[0]
    vo = np.full(occ.shape, view, dtype=np.int64)
    vm = np.full(match.shape, view, dtype=np.int64)
    return (_cloud_from_pixels(frame, vo, occ), _cloud_from_pixels(frame, vm, match),
            cmap.target.reshape(-1)[match])


# --- fusion functions ----------------------------------------------------------

FEATURES = 29   # 2 x [dP 3, O 1, C 3, Q 4, S 3] + D
OUTPUTS = 14    # dP 3, O 1, C 3, Q 4, S 3
HIDDEN = 64
LAYOUT = "in:dPa3,Oa1,Ca3,Qa4,Sa3,dPb3,Ob1,Cb3,Qb4,Sb3,D1;out:dP3,O1,C3,Q4,S3;dP=rel-midpoint"
ACTIVATIONS = {1: "relu", 2: "tanh"}
WEIGHT_MAGIC = b"F4DW"
WEIGHT_VERSION = 1


def _align_signs(qa, qb):
    """Flip ``qb`` onto ``qa``'s hemisphere; returns aligned ``qb`` and the flip mask."""
    flip = np.sum(qa * qb, axis=1) < 0
    return np.where(flip[:, None], -qb, qb), flip


def _finish_quaternion(q, flip):
    n = np.linalg.norm(q, axis=1, keepdims=True)
    safe = n[:, 0] > 1e-12
    q = np.where(safe[:, None], q / np.where(safe, n[:, 0], 1.0)[:, None],
                 np.array([1.0, 0.0, 0.0, 0.0], dtype=q.dtype))
    # a flipped pair's result depends on argument order only through its sign
    neg = flip & (q[:, 0] < 0)
    return np.where(neg[:, None], -q, q)


@dataclass(eq=False)
class FusionFunction:
    """``average`` or a two-layer perceptron with weights ``(W1, b1, W2, b2)``."""

    variant: str = "average"
    W1: np.ndarray | None = None   # (HIDDEN, FEATURES)
    b1: np.ndarray | None = None
    W2: np.ndarray | None = None   # (OUTPUTS, HIDDEN)
    b2: np.ndarray | None = None
    activation: str = "relu"

    def __post_init__(self):
        if self.variant not in ("average", "mlp"):
            raise InvalidValue(f"unknown fusion variant {self.variant!r}")
        if self.variant == "mlp":
            W1 = np.asarray(self.W1, dtype=np.float32)
            W2 = np.asarray(self.W2, dtype=np.float32)
            b1 = np.asarray(self.b1, dtype=np.float32).reshape(-1)
            b2 = np.asarray(self.b2, dtype=np.float32).reshape(-1)
            if (W1.ndim != 2 or W1.shape[1] != FEATURES or W2.ndim != 2 or W2.shape[0] != OUTPUTS
                    or W2.shape[1] != W1.shape[0] or b1.shape != (W1.shape[0],) or b2.shape != (OUTPUTS,)):
                raise WeightFileMismatch(
                    f"perceptron shapes {W1.shape}/{b1.shape}/{W2.shape}/{b2.shape} do not fit "
                    f"{FEATURES} -> hidden -> {OUTPUTS}")
            if self.activation not in ACTIVATIONS.values():
                raise WeightFileMismatch(f"unknown activation {self.activation!r}")
            self.W1, self.b1, self.W2, self.b2 = W1, b1, W2, b2

    @classmethod
    def average(cls):
        return cls("average")

    @classmethod
    def identity_mlp(cls, hidden=HIDDEN):
        """Perceptron that reproduces the attribute average on its inputs.

        The hidden layer carries ``relu(x)`` and ``relu(-x)`` for the 28
        attribute features; the output layer averages the two members.
        """
        n = FEATURES - 1
        if hidden < 2 * n:
            raise InvalidValue(f"hidden width must be at least {2 * n}")
        W1 = np.zeros((hidden, FEATURES), dtype=np.float32)
        W1[:n, :n] = np.eye(n)
        W1[n:2 * n, :n] = -np.eye(n)
        half = np.zeros((OUTPUTS, n), dtype=np.float32)
        half[:, :OUTPUTS] = 0.5 * np.eye(OUTPUTS)
        half[:, OUTPUTS:] = 0.5 * np.eye(OUTPUTS)
        W2 = np.zeros((OUTPUTS, hidden), dtype=np.float32)
        W2[:, :n] = half
        W2[:, n:2 * n] = -half
        return cls("mlp", W1, np.zeros(hidden, np.float32), W2, np.zeros(OUTPUTS, np.float32))

    def forward(self, features):
        h = features @ self.W1.T + self.b1
        h = np.maximum(h, 0) if self.activation == "relu" else np.tanh(h)
        return h @ self.W2.T + self.b2


def pair_features(a: GaussianCloud, b: GaussianCloud, D=None):
    """Perceptron inputs and the pair midpoint; ``b``'s quaternion is sign-aligned to ``a``."""
    mid = 0.5 * (a.position + b.position)
    qb, flip = _align_signs(a.rotation, b.rotation)
    n = len(a)
    d = np.zeros((n, 1), np.float32) if D is None else np.asarray(D, np.float32).reshape(n, 1)
    feats = np.concatenate([
        a.position - mid, a.opacity[:, None], a.color, a.rotation, a.scale,
        b.position - mid, b.opacity[:, None], b.color, qb, b.scale, d], axis=1).astype(np.float32)
    return feats, mid, flip


def fuse(a: GaussianCloud, b: GaussianCloud, fn: FusionFunction | None = None, D=None) -> GaussianCloud:
    """Merge aligned pairs into one Gaussian each; the result keeps ``a``'s source tags."""
    fn = fn or FusionFunction.average()
    if len(a) != len(b):
        raise ShapeMismatch(f"pair sides differ in length: {len(a)} vs {len(b)}")
    if fn.variant == "average":
        qb, flip = _align_signs(a.rotation, b.rotation)
        pos = 0.5 * (a.position + b.position)
        op = 0.5 * (a.opacity + b.opacity)
        col = 0.5 * (a.color + b.color)
        scl = 0.5 * (a.scale + b.scale)
        rot = _finish_quaternion(a.rotation + qb, flip)
    else:
        feats, mid, flip = pair_features(a, b, D)
        out = fn.forward(feats)
        pos = mid + out[:, 0:3]
        op = np.clip(out[:, 3], 0.0, 1.0)
        col = np.clip(out[:, 4:7], 0.0, 1.0)
        rot = _finish_quaternion(out[:, 7:11], flip)
        scl = np.maximum(out[:, 11:14], np.float32(1e-8))
    f32 = np.float32
    return GaussianCloud(_frozen(pos.astype(f32, copy=False)), _frozen(op.astype(f32, copy=False)),
                         _frozen(col.astype(f32, copy=False)), _frozen(rot.astype(f32, copy=False)),
                         _frozen(scl.astype(f32, copy=False)), a.source)


# --- weight files -----------------------------------------------------------------

def write_fusion_weights(fn: FusionFunction, path_or_stream):
    if fn.variant != "mlp":
        raise InvalidValue("only perceptron fusion functions have weights")
    act = {v: k for k, v in ACTIVATIONS.items()}[fn.activation]
    layout = LAYOUT.encode("utf-8")
    buf = io.BytesIO()
    buf.write(WEIGHT_MAGIC)
    buf.write(struct.pack("<III", WEIGHT_VERSION, 2, act))
    for W in (fn.W1, fn.W2):
        buf.write(struct.pack("<II", W.shape[1], W.shape[0]))
    buf.write(struct.pack("<I", len(layout)))
    buf.write(layout)
    for arr in (fn.W1, fn.b1, fn.W2, fn.b2):
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(data)
    else:
        with open(path_or_stream, "wb") as fh:
            fh.write(data)


def read_fusion_weights(path_or_stream) -> FusionFunction:
    if hasattr(path_or_stream, "read"):
        data = path_or_stream.read()
    else:
        with open(path_or_stream, "rb") as fh:
            data = fh.read()
    if len(data) < 16 or data[:4] != WEIGHT_MAGIC:
        raise CorruptHeader("not a fusion weight file")
    version, n_layers, act = struct.unpack_from("<III", data, 4)
    if version != WEIGHT_VERSION:
        raise VersionUnsupported(f"fusion weight version {version}")
    if n_layers != 2:
        raise WeightFileMismatch(f"expected 2 layers, file has {n_layers}")
    if act not in ACTIVATIONS:
        raise CorruptHeader(f"unknown activation code {act}")
    off = 16
    if len(data) < off + 20:
        raise TruncatedPayload("weight header truncated")
    (i1, o1), (i2, o2) = struct.unpack_from("<II", data, off), struct.unpack_from("<II", data, off + 8)
    (n_layout,) = struct.unpack_from("<I", data, off + 16)
    off += 20
    if n_layout > 4096:
        raise CorruptHeader("layout string too long")
    if len(data) < off + n_layout:
        raise TruncatedPayload("layout string truncated")
    off += n_layout
    if max(i1, o1, i2, o2) > 1 << 16:
        raise CorruptHeader("implausible layer size")
    sizes = [o1 * i1, o1, o2 * i2, o2]
    need = 4 * sum(sizes)
    if len(data) - off < need:
        raise TruncatedPayload(f"weights need {need} bytes, {len(data) - off} present")
    if len(data) - off > need:
        raise CorruptHeader("trailing bytes after weights")
    arrays = []
    for n in sizes:
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32))
        off += 4 * n
    return FusionFunction("mlp", arrays[0].reshape(o1, i1), arrays[1], arrays[2].reshape(o2, i2),
                          arrays[3], activation=ACTIVATIONS[act])


# --- full pipeline ---------------------------------------------------------------------

@dataclass(eq=False)
class Interpolation:
    cloud: GaussianCloud
    n_occluded_t: int
    n_occluded_tm1: int
    n_pairs: int
    maps_t: list          # ConsistencyMap per view, frame t toward t - 1
    maps_tm1: list        # ConsistencyMap per view, frame t - 1 toward t

    def as_dict(self):
        return {"count": len(self.cloud), "occluded_t": self.n_occluded_t,
                "occluded_tm1": self.n_occluded_tm1, "pairs": self.n_pairs}


def interpolate_detailed(frame_t: GaussianFrame, frame_tm1: GaussianFrame, motions_t, motions_tm1,
                         t_prime, cameras, tau=DEFAULT_TAU, fn: FusionFunction | None = None) -> Interpolation:
    """Novel-time Gaussians at ``t'``: occluded from both frames plus fused pairs.

    Motions and flows are evaluated per view; consistency is checked in both
    directions. Each matched pixel of frame ``t`` is paired with the frame
    ``t - 1`` Gaussian its flow lands on. Positions are moved to ``t'`` first
    and fused afterwards.
    """
    t = frame_t.timestamp
    t_prime = _check_t_prime(t, t_prime)
    if not tau > 0:
        raise InvalidValue("tau must be positive")
    if frame_t.position.shape != frame_tm1.position.shape:
        raise ShapeMismatch("frames differ in shape")
    cameras = list(cameras)
    V, _, H, W = frame_t.position.shape
    if len(cameras) != V:
        raise ShapeMismatch(f"{len(cameras)} cameras for {V} views")
    m1 = stack_motion(motions_t, "backward", frame_t)
    m2 = stack_motion(motions_tm1, "forward", frame_tm1)

    HW = H * W
    P_t = frame_t.position.reshape(V, 3, HW)
    P_tm1 = frame_tm1.position.reshape(V, 3, HW)
    ok_t = frame_t.valid.reshape(V, HW)
    ok_tm1 = frame_tm1.valid.reshape(V, HW)
    fm1 = m1.reshape(V, 3, HW)
    fm2 = m2.reshape(V, 3, HW)
    D_t = np.empty((V, HW))
    D_tm1 = np.empty((V, HW))
    q_t = np.empty((V, HW), dtype=np.int64)
    q_tm1 = np.empty((V, HW), dtype=np.int64)
    for v, cam in enumerate(cameras):
        args = (cam.R, cam.translation, cam.fx, cam.fy, cam.cx, cam.cy, W, H)
        _consistency_kernel(P_t[v], fm1[v], ok_t[v], P_tm1[v], ok_tm1[v], *args, D_t[v], q_t[v])
        _consistency_kernel(P_tm1[v], fm2[v], ok_tm1[v], P_t[v], ok_t[v], *args, D_tm1[v], q_tm1[v])
    maps_t = [ConsistencyMap(D_t[v].reshape(1, H, W), q_t[v].reshape(H, W), tau) for v in range(V)]
    maps_tm1 = [ConsistencyMap(D_tm1[v].reshape(1, H, W), q_tm1[v].reshape(H, W), tau)
                for v in range(V)]

    occ_t = np.flatnonzero(ok_t & ~(D_t <= tau))
    occ_tm1 = np.flatnonzero(ok_tm1 & ~(D_tm1 <= tau))
    pair_src = np.flatnonzero(ok_t & (D_t <= tau))
    pair_dst = (pair_src // HW) * HW + q_t.reshape(-1)[pair_src]
    n_ot, n_otm1, n_p = len(occ_t), len(occ_tm1), len(pair_src)

    f_t = np.float32(abs(t_prime - t))
    f_tm1 = np.float32(abs(t_prime - (t - 1)))
    if fn is None or fn.variant == "average":
        arrays = _assemble_average(
            frame_t, frame_tm1, fm1, fm2, occ_t, occ_tm1, pair_src, pair_dst, f_t, f_tm1)
        cloud = GaussianCloud(*(_frozen(a) for a in arrays))
    else:
        def moved(frame, flat_m, idx, factor):
            vi, pi = idx // HW, idx % HW
            pos = frame.position.reshape(V, 3, HW)[vi, :, pi]
            if factor != 0:
                pos = pos + factor * flat_m[vi, :, pi]
            return _cloud_from_pixels(frame, vi, pi, pos)

        a = moved(frame_t, fm1, pair_src, f_t)
        b = moved(frame_tm1, fm2, pair_dst, f_tm1)
        fused = fuse(a, b, fn, D_t.reshape(-1)[pair_src])
        parts = (moved(frame_t, fm1, occ_t, f_t), moved(frame_tm1, fm2, occ_tm1, f_tm1), fused)
        cloud = GaussianCloud(*(_frozen(np.concatenate(p)) for p in zip(*(c._arrays() for c in parts))))
    return Interpolation(cloud, n_ot, n_otm1, n_p, maps_t, maps_tm1)


@nb.njit(cache=True)
def _consistency_kernel(P, M, ok_src, Pd, ok_dst, R, T, fx, fy, cx, cy, W, H, D, target):
    """Fused scene-flow projection and dual-consistency distance for one view.

    Mirrors ``project_scene_flow`` followed by ``dual_consistency``, including
    the float32 rounding of the flow raster.
    """
    n = P.shape[1]
    for i in range(n):
        D[i] = np.inf
        target[i] = -1
        if not ok_src[i]:
            continue
        x0 = np.float64(P[0, i])
        y0 = np.float64(P[1, i])
        z0 = np.float64(P[2, i])
        x1 = x0 + np.float64(M[0, i])
        y1 = y0 + np.float64(M[1, i])
        z1 = z0 + np.float64(M[2, i])
        c0x = R[0, 0] * x0 + R[0, 1] * y0 + R[0, 2] * z0 + T[0]
        c0y = R[1, 0] * x0 + R[1, 1] * y0 + R[1, 2] * z0 + T[1]
        c0z = R[2, 0] * x0 + R[2, 1] * y0 + R[2, 2] * z0 + T[2]
        c1x = R[0, 0] * x1 + R[0, 1] * y1 + R[0, 2] * z1 + T[0]
        c1y = R[1, 0] * x1 + R[1, 1] * y1 + R[1, 2] * z1 + T[1]
        c1z = R[2, 0] * x1 + R[2, 1] * y1 + R[2, 2] * z1 + T[2]
        if not (c0z > FLOW_NEAR and c1z > FLOW_NEAR):
            continue
        fu = np.float32((fx * c1x / c1z + cx) - (fx * c0x / c0z + cx))
        fv = np.float32((fy * c1y / c1z + cy) - (fy * c0y / c0z + cy))
        px = i % W
        py = i // W
        qx = np.int64(np.floor(px + np.float64(fu) + 0.5))
        qy = np.int64(np.floor(py + np.float64(fv) + 0.5))
        if qx < 0 or qx >= W or qy < 0 or qy >= H:
            continue
        q = qy * W + qx
        target[i] = q
        if not ok_dst[q]:
            continue
        dx = x1 - np.float64(Pd[0, q])
        dy = y1 - np.float64(Pd[1, q])
        dz = z1 - np.float64(Pd[2, q])
        D[i] = np.sqrt(dx * dx + dy * dy + dz * dz)


@nb.njit(cache=True)
def _gather_moved(P, M, O, C, Q, S, idx, factor, HW, t, row,
                  out_p, out_o, out_c, out_q, out_s, out_src):
    for k in range(idx.shape[0]):
        g = idx[k]
        v = g // HW
        p = g % HW
        r = row + k
        for c in range(3):
            val = P[v, c, p]
            if factor != 0:
                val = val + factor * M[v, c, p]
            out_p[r, c] = val
            out_c[r, c] = C[v, c, p]
            out_s[r, c] = S[v, c, p]
        out_o[r] = O[v, 0, p]
        for c in range(4):
            out_q[r, c] = Q[v, c, p]
        out_src[r, 0] = v
        out_src[r, 1] = p
        out_src[r, 2] = t


@nb.njit(cache=True)
def _fuse_average_kernel(Pa, Ma, Oa, Ca, Qa, Sa, Pb, Mb, Ob, Cb, Qb, Sb, src, dst, fa, fb, HW, t, row,
                         out_p, out_o, out_c, out_q, out_s, out_src):
    half = np.float32(0.5)
    for k in range(src.shape[0]):
        ga = src[k]
        gb = dst[k]
        va, pa = ga // HW, ga % HW
        vb, pb = gb // HW, gb % HW
        r = row + k
        for c in range(3):
            a = Pa[va, c, pa]
            if fa != 0:
                a = a + fa * Ma[va, c, pa]
            b = Pb[vb, c, pb]
            if fb != 0:
                b = b + fb * Mb[vb, c, pb]
            out_p[r, c] = half * (a + b)
            out_c[r, c] = half * (Ca[va, c, pa] + Cb[vb, c, pb])
            out_s[r, c] = half * (Sa[va, c, pa] + Sb[vb, c, pb])
        out_o[r] = half * (Oa[va, 0, pa] + Ob[vb, 0, pb])
        dot = np.float32(0.0)
        for c in range(4):
            dot += Qa[va, c, pa] * Qb[vb, c, pb]
        sign = np.float32(-1.0) if dot < 0 else np.float32(1.0)
        nrm = np.float32(0.0)
        for c in range(4):
            qc = Qa[va, c, pa] + sign * Qb[vb, c, pb]
            out_q[r, c] = qc
            nrm += qc * qc
        nrm = np.sqrt(nrm)
        if nrm > 1e-12:
            flip = sign < 0 and out_q[r, 0] < 0
            for c in range(4):
                out_q[r, c] = out_q[r, c] / nrm
                if flip:
                    out_q[r, c] = -out_q[r, c]
        else:
            out_q[r, 0] = 1.0
            for c in range(1, 4):
                out_q[r, c] = 0.0
        out_src[r, 0] = va
        out_src[r, 1] = pa
        out_src[r, 2] = t


def _assemble_average(frame_t, frame_tm1, fm1, fm2, occ_t, occ_tm1, pair_src, pair_dst, f_t, f_tm1):
    V, _, H, W = frame_t.position.shape
    HW = H * W
    n = len(occ_t) + len(occ_tm1) + len(pair_src)
    f32 = np.float32
    out = (np.empty((n, 3), f32), np.empty(n, f32), np.empty((n, 3), f32),
           np.empty((n, 4), f32), np.empty((n, 3), f32), np.empty((n, 3), np.int64))

    def maps(frame):
        return tuple(a.reshape(V, a.shape[1], HW) for a in
                     (frame.position, frame.opacity, frame.color, frame.rotation, frame.scale))

    Pt, Ot, Ct, Qt, St = maps(frame_t)
    Pp, Op, Cp, Qp, Sp = maps(frame_tm1)
    _gather_moved(Pt, fm1, Ot, Ct, Qt, St, occ_t, f_t, HW, frame_t.timestamp, 0, *out)
    row = len(occ_t)
    _gather_moved(Pp, fm2, Op, Cp, Qp, Sp, occ_tm1, f_tm1, HW, frame_tm1.timestamp, row, *out)
    row += len(occ_tm1)
    _fuse_average_kernel(Pt, fm1, Ot, Ct, Qt, St, Pp, fm2, Op, Cp, Qp, Sp, pair_src, pair_dst,
                         f_t, f_tm1, HW, frame_t.timestamp, row, *out)
    return out


def interpolate_time(frame_t, frame_tm1, motions_t, motions_tm1, t_prime, cameras,
                     tau=DEFAULT_TAU, fn: FusionFunction | None = None) -> GaussianCloud:
    return interpolate_detailed(frame_t, frame_tm1, motions_t, motions_tm1, t_prime,
                                cameras, tau, fn).cloud


def fusion_loss(rendered, gt, weights: LossWeights | None = None, lpips=None) -> LossReport:
    """Photometric loss between novel-time renders and their targets, summed over views."""
    rendered, gt = list(rendered), list(gt)
    if len(rendered) != len(gt):
        raise ShapeMismatch(f"{len(rendered)} renders vs {len(gt)} targets")
    per_view = [photometric_loss(r, g, weights, lpips) for r, g in zip(rendered, gt)]
    return LossReport(float(sum(v["total"] for v in per_view)), per_view)
