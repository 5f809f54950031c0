import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from g4d.model import Camera, GaussianCloud, make_gaussian_frame

settings.register_profile("g4d", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("g4d")


def identity_camera(f=60.0, size=64):
    c = (size - 1) / 2.0
    return Camera.from_params([1, 0, 0, 0], [0, 0, 0], f, f, c, c)


def random_cloud(rng, n, depth=(2.0, 6.0), spread=1.2):
    z = rng.uniform(*depth, n)
    pos = np.stack([rng.uniform(-spread, spread, n) * z / 3,
                    rng.uniform(-spread, spread, n) * z / 3, z], 1)
    q = rng.normal(size=(n, 4))
    return GaussianCloud.create(pos, rng.uniform(0.05, 1.0, n), rng.uniform(0, 1, (n, 3)),
                                q / np.linalg.norm(q, axis=1, keepdims=True),
                                np.exp(rng.uniform(np.log(0.01), np.log(0.2), (n, 3))))


def random_frame(rng, V=2, H=6, W=5, timestamp=0, valid=None):
    q = rng.normal(size=(V, 4, H, W))
    return make_gaussian_frame(dict(
        P=rng.normal(size=(V, 3, H, W)), O=rng.uniform(0, 1, (V, 1, H, W)),
        C=rng.uniform(0, 1, (V, 3, H, W)), Q=q / np.linalg.norm(q, axis=1, keepdims=True),
        S=rng.uniform(0.01, 0.1, (V, 3, H, W))), valid, timestamp=timestamp)


def plane_frame(V=1, H=16, W=16, f=20.0, depth=2.0, timestamp=0, color=None):
    """Fronto-parallel plane sampled at pixel centers of an identity camera."""
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    cx, cy = (W - 1) / 2, (H - 1) / 2
    P = np.stack([(xs - cx) * depth / f, (ys - cy) * depth / f,
                  np.full((H, W), depth)])
    rng = np.random.default_rng(0)
    C = rng.uniform(0, 1, (3, H, W)) if color is None else color
    return make_gaussian_frame(dict(
        P=np.broadcast_to(P, (V, 3, H, W)), O=np.full((V, 1, H, W), 0.9),
        C=np.broadcast_to(C, (V, 3, H, W)),
        Q=np.broadcast_to(np.array([1.0, 0, 0, 0])[None, :, None, None], (V, 4, H, W)),
        S=np.full((V, 3, H, W), 0.3 * depth / f)), timestamp=timestamp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
