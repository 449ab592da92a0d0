"""Standard monocular depth evaluation metrics (Eigen protocol)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import BoolArray, DimensionError, Raster

DEFAULT_DEPTH_CLAMP = (1e-3, 80.0)


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int


def depth_metrics(
    pred: Raster,
    gt: Raster,
    valid: BoolArray | None = None,
    median_scale: bool = True,
    clamp: tuple[float, float] = DEFAULT_DEPTH_CLAMP,
) -> MetricsReport:
    """Compute AbsRel, SqRel, RMSE, RMSE log and the delta accuracies.

    Ground truth pixels outside [clamp_min, clamp_max] are excluded. With
    ``median_scale`` the prediction is rescaled by median(gt)/median(pred)
    over the support first (self-supervised predictions are scale
    ambiguous); predictions are then clamped to the same range. The delta
    thresholds use strict inequality: fraction with max(p/g, g/p) < 1.25^k.
    """
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} and gt {gt.shape} differ")
    lo, hi = clamp
    if not 0 < lo < hi:
        raise ValueError(f"invalid clamp range {clamp}")
    g = gt.data.astype(np.float64)
    p = pred.data.astype(np.float64)
    support = (g >= lo) & (g <= hi)
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        if v.shape != support.shape:
            raise DimensionError("valid mask shape differs from depth rasters")
        support &= v
    n = int(np.count_nonzero(support))
    if n == 0:
        raise ValueError("empty support: no valid ground-truth pixels in range")
    g = g[support]
    p = p[support]
    if (p <= 0).any():
        raise ValueError("non-positive predicted depth inside the support")

    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, lo, hi)

    ratio = np.maximum(p / g, g / p)
    d1 = float((ratio < 1.25).mean())
    d2 = float((ratio < 1.25**2).mean())
    d3 = float((ratio < 1.25**3).mean())
    diff = p - g
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=d1,
        delta2=d2,
        delta3=d3,
        n_pixels=n,
    )


def aggregate_metrics(reports: list[MetricsReport]) -> MetricsReport:
    """Per-image average of metric values (standard evaluation protocol);
    pixel counts are summed."""
    if not reports:
        raise ValueError("nothing to aggregate")
    mean = lambda field: float(np.mean([getattr(r, field) for r in reports]))
    return MetricsReport(
        abs_rel=mean("abs_rel"),
        sq_rel=mean("sq_rel"),
        rmse=mean("rmse"),
        rmse_log=mean("rmse_log"),
        delta1=mean("delta1"),
        delta2=mean("delta2"),
        delta3=mean("delta3"),
        n_pixels=sum(r.n_pixels for r in reports),
    )
