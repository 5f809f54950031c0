"""Small built-in consistency suite behind ``g4d selftest``."""

from __future__ import annotations

import io

import numpy as np

from . import assets
from .gauge import camera_loss, metric_gauge
from .metrics import psnr, ssim
from .model import Camera, FlowField, GaussianCloud
from .motion import FlowConsistencyParams, cyclic_weight
from .render import RenderConfig, render, render_reference


def random_cloud(rng, n, depth=(2.0, 6.0), spread=1.2):
    z = rng.uniform(*depth, n)
    pos = np.stack([rng.uniform(-spread, spread, n) * z / 3, rng.uniform(-spread, spread, n) * z / 3, z], 1)
    q = rng.normal(size=(n, 4))
    return GaussianCloud.create(pos, rng.uniform(0.05, 1.0, n), rng.uniform(0, 1, (n, 3)),
                                q / np.linalg.norm(q, axis=1, keepdims=True),
                                np.exp(rng.uniform(np.log(0.01), np.log(0.2), (n, 3))))


def _check_render(seeds):
    cam = Camera.from_params([1, 0, 0, 0], [0, 0, 0], 60.0, 60.0, 31.5, 31.5)
    cfg = RenderConfig(64, 64)
    worst = 0.0
    for s in range(seeds):
        cloud = random_cloud(np.random.default_rng(s), 500)
        worst = max(worst, float(np.abs(render(cloud, cam, cfg) - render_reference(cloud, cam, cfg)).max()))
    return worst <= 1e-5, {"max_abs_diff": worst, "seeds": seeds}


def _check_gauge():
    rng = np.random.default_rng(1)
    gt = [Camera.from_params([1, 0, 0, 0], [0, 0, 0], 100, 100, 50, 50)]
    for _ in range(3):
        q = rng.normal(size=4)
        gt.append(Camera.from_params(q, rng.normal(size=3), 100, 100, 50, 50))
    worst = 0.0
    for s in (0.5, 2.0, 10.0):
        pred = [c.with_translation(c.translation / s) for c in gt]
        worst = max(worst, abs(metric_gauge(pred, gt).gauge - 1 / s) * s,
                    camera_loss(pred, gt, 1 / s).total)
    return worst <= 1e-9, {"max_error": worst}


def _check_metrics():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (3, 32, 32))
    b = a + 0.1
    ok = abs(psnr(a, b) - 20.0) < 0.01 and abs(ssim(a, a) - 1.0) <= 1e-9
    return ok, {"psnr_offset": psnr(a, b), "ssim_self": ssim(a, a)}


def _check_cyclic():
    H = W = 8
    f = np.zeros((2, H, W), np.float32)
    f[0] = 1.0
    b = -f.copy()
    b[0, 4, 5] += 0.5  # residual at the target of pixel (4, 4)
    w = cyclic_weight(FlowField(f), FlowField(b), FlowConsistencyParams()).weights[0]
    expected = np.exp(-(0.1 * 1.0 + 0.5) * 0.5)
    ok = abs(float(w[4, 4]) - expected) <= 1e-7 and w[0, W - 1] == 0.0 and w[0, 0] == 1.0
    return bool(ok), {"weight": float(w[4, 4]), "expected": float(expected)}


def _check_io():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 64)
    buf = io.BytesIO()
    assets.write_cloud(cloud, buf)
    back = assets.read_cloud(io.BytesIO(buf.getvalue()))
    ok = all(np.array_equal(x, y) for x, y in zip(cloud._arrays(), back._arrays()))
    fuzz_ok = True
    data = bytearray(buf.getvalue())
    for i in range(200):
        d = bytearray(data[: rng.integers(0, 48)]) if i % 2 else bytearray(data)
        if d:
            d[rng.integers(0, min(len(d), 40))] = rng.integers(0, 256)
        try:
            assets.read_cloud(io.BytesIO(bytes(d)))
        except assets.AssetError:
            pass
        except Exception:  # noqa: BLE001
            fuzz_ok = False
    return ok and fuzz_ok, {"round_trip": ok, "fuzz_typed_errors": fuzz_ok}


def run_selftest(quick=True):
    checks = {
        "render_equivalence": lambda: _check_render(3 if quick else 20),
        "gauge_exactness": _check_gauge,
        "metric_closed_forms": _check_metrics,
        "cyclic_weight": _check_cyclic,
        "io_round_trip": _check_io,
    }
    results = {}
    for name, fn in checks.items():
        try:
            ok, info = fn()
        except Exception as exc:  # noqa: BLE001
            ok, info = False, {"error": f"{type(exc).__name__}: {exc}"}
        results[name] = {"ok": bool(ok), **info}
    return results
