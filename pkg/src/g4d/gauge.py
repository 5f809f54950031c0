"""Metric gauge: translation ratios between predicted and ground-truth cameras.

The predicted model lives in a normalized frame. If its cameras are right up
to scale, every ratio ``|T_pred| / |T_gt|`` is the same number, and that
number (the gauge) maps ground-truth translations into the model frame.
Camera 0 is the reference (``T = 0``) and never contributes a ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import (DegenerateTranslation, LengthMismatch, NonPositiveGauge,
                     TooFewCameras)
from .model import Camera

EPS = 1e-9


@dataclass
class GaugeReport:
    ratios: np.ndarray               # (n-1,) or (k, n-1)
    gauge: float
    predicted_gauge: float | None = None
    rotation_term: float | None = None
    direction_term: float | None = None
    ratio_term: float | None = None
    gauge_term: float | None = None
    # temporal form only: the printed normalization 1/((n-1)(k-1)) applied to the same sum
    gauge_literal: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total(self):
        terms = (self.rotation_term, self.direction_term, self.ratio_term, self.gauge_term)
        if any(t is None for t in terms):
            return None
        return float(sum(terms))

    def as_dict(self):
        d = {
            "gauge": self.gauge,
            "gauge_literal": self.gauge_literal,
            "predicted_gauge": self.predicted_gauge,
            "ratios": np.asarray(self.ratios).tolist(),
            "loss": None,
        }
        if self.total is not None:
            d["loss"] = {
                "rotation": self.rotation_term,
                "direction": self.direction_term,
                "ratio_consistency": self.ratio_term,
                "gauge_prediction": self.gauge_term,
                "total": self.total,
            }
        return d


def translation_ratio(pred: Camera, gt: Camera) -> float:
    """``|T_pred| / |T_gt|``; raises when either translation is (near) zero."""
    n_pred = float(np.linalg.norm(pred.translation))
    n_gt = float(np.linalg.norm(gt.translation))
    if n_gt <= EPS or n_pred <= EPS:
        raise DegenerateTranslation(
            f"translation norm too small (pred {n_pred:g}, gt {n_gt:g})")
    return n_pred / n_gt


def _ratios(pred, gt):
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted cameras vs {len(gt)} ground-truth")
    if len(pred) < 2:
        raise TooFewCameras("the gauge needs at least two cameras")
    return np.array([translation_ratio(p, g) for p, g in zip(pred[1:], gt[1:])])


def metric_gauge(pred, gt) -> GaugeReport:
    ratios = _ratios(pred, gt)
    return GaugeReport(ratios=ratios, gauge=float(ratios.sum() / ratios.size))


def metric_gauge_temporal(pred_seq, gt_seq) -> GaugeReport:
    """Gauge over a whole sequence of camera sets.

    ``gauge`` is the mean over every summed ratio; ``gauge_literal`` keeps
    the alternative normalization by ``(n-1)(k-1)`` for comparison (it is
    ``None`` when ``k = 1``).
    """
    pred_seq, gt_seq = list(pred_seq), list(gt_seq)
    if len(pred_seq) != len(gt_seq):
        raise LengthMismatch(f"{len(pred_seq)} predicted timestamps vs {len(gt_seq)}")
    if not pred_seq:
        raise TooFewCameras("empty camera sequence")
    if len(pred_seq) == 1:
        return metric_gauge(pred_seq[0], gt_seq[0])
    rows = [_ratios(p, g) for p, g in zip(pred_seq, gt_seq)]
    if len({r.size for r in rows}) != 1:
        raise LengthMismatch("camera count changes across timestamps")
    ratios = np.stack(rows)
    k, m = ratios.shape
    total = float(ratios.sum())
    return GaugeReport(ratios=ratios, gauge=total / (k * m),
                       gauge_literal=total / (m * (k - 1)))


def _rotation_term(pred, gt):
    total = 0.0
    for p, g in zip(pred, gt):
        total += float(np.linalg.norm(quat.canonical(p.rotation) - quat.canonical(g.rotation)))
    return total


def _direction_term(pred, gt):
    total = 0.0
    for p, g in zip(pred[1:], gt[1:]):
        tp, tg = p.translation, g.translation
        total += float(np.linalg.norm(tp / np.linalg.norm(tp) - tg / np.linalg.norm(tg)))
    return total


def camera_loss(pred, gt, predicted_gauge, temporal=False) -> GaugeReport:
    """Rotation, translation-direction, ratio-consistency and gauge-prediction terms.

    With ``temporal=True`` the inputs are sequences of camera sets and
    ``predicted_gauge`` may be a scalar or one value per timestamp.
    """
    if temporal:
        pred_seq, gt_seq = [list(p) for p in pred], [list(g) for g in gt]
        report = metric_gauge_temporal(pred_seq, gt_seq)
        ratios = np.atleast_2d(report.ratios)
        k = len(pred_seq)
        p_hat = np.broadcast_to(np.asarray(predicted_gauge, dtype=np.float64), (k,))
        rot = sum(_rotation_term(p, g) for p, g in zip(pred_seq, gt_seq))
        direc = sum(_direction_term(p, g) for p, g in zip(pred_seq, gt_seq))
        ratio_term = float(np.abs(ratios - report.gauge).sum())
        gauge_term = float(np.abs(p_hat - report.gauge).sum())
        report.predicted_gauge = p_hat.tolist() if p_hat.size > 1 and np.ptp(p_hat) > 0 else float(p_hat[0])
    else:
        pred, gt = list(pred), list(gt)
        report = metric_gauge(pred, gt)
        rot = _rotation_term(pred, gt)
        direc = _direction_term(pred, gt)
        ratio_term = float(np.abs(report.ratios - report.gauge).sum())
        gauge_term = abs(float(predicted_gauge) - report.gauge)
        report.predicted_gauge = float(predicted_gauge)
    report.rotation_term = rot
    report.direction_term = direc
    report.ratio_term = ratio_term
    report.gauge_term = gauge_term
    return report


def _check_gauge(g):
    g = float(g)
    if not np.isfinite(g) or g <= 0:
        raise NonPositiveGauge(f"gauge must be positive, got {g}")
    return g


def apply_gauge_to_camera(gt_cam: Camera, gauge) -> Camera:
    """Bring a ground-truth camera into the model frame (``T <- gauge * T``)."""
    return gt_cam.with_translation(_check_gauge(gauge) * gt_cam.translation)


def to_metric_points(points, predicted_gauge):
    """Divide coordinates by the predicted gauge.

    Callers converting Gaussians must divide scales and motion vectors by the
    same factor; :func:`to_metric_cloud` does that for clouds.
    """
    g = _check_gauge(predicted_gauge)
    return np.asarray(points, dtype=np.float64) / g


def to_metric_cloud(cloud, predicted_gauge):
    from .model import GaussianCloud

    g = _check_gauge(predicted_gauge)
    return GaussianCloud.create(cloud.position / g, cloud.opacity, cloud.color,
                                cloud.rotation, cloud.scale / g, cloud.source)


def to_metric_motion(motion, predicted_gauge):
    from .model import MotionField

    g = _check_gauge(predicted_gauge)
    return MotionField(
        None if motion.backward is None else motion.backward / g,
        None if motion.forward is None else motion.forward / g,
        motion.view, motion.timestamp)
