"""Reconstruction losses, the composite warped image, and the weighted
total objective.

Every per-pixel sum is implemented as a mean over supported pixels (weighted
by the validity mask where applicable) so loss magnitudes are independent of
resolution; see ``LossTerm.support`` for the support actually used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .types import (
    BoolArray,
    DimensionError,
    FloatArray,
    InstanceMaskSet,
    Raster,
    ValidityMask,
)
from .warp import WarpResult

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class NonFiniteLossError(ArithmeticError):
    """A loss term evaluated to NaN or infinity."""


class LossTerm(NamedTuple):
    """Scalar loss value plus the number of pixels that supported it.

    ``support == 0`` means the term had empty support and defaulted to 0.
    """

    value: float
    support: int


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective and the L1/SSIM mixing factor."""

    lam_pe: float = 2.0
    lam_g: float = 1.0
    lam_s: float = 0.1
    lam_h: float = 0.02
    alpha: float = 0.85

    def __post_init__(self):
        for name in ("lam_pe", "lam_g", "lam_s", "lam_h"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class HeightPriors:
    """Scalar height prior (scene units) and per-object pixel heights.

    Objects without an entry in ``pixel_heights`` fall back to the pixel
    height of their mask's bounding box.
    """

    prior_height: float
    pixel_heights: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.prior_height <= 0:
            raise ValueError("height prior must be positive")
        for i, h in self.pixel_heights.items():
            if h <= 0:
                raise ValueError(f"pixel height of object {i} must be positive")


@dataclass(frozen=True)
class LossReport:
    photometric: float
    geometric: float
    smoothness: float
    height: float
    total: float
    support_photometric: int
    support_geometric: int
    support_smoothness: int
    support_height: int
    flags: tuple[str, ...] = ()


def _box3(x: FloatArray) -> FloatArray:
    """3x3 mean with edge replication."""
    return ndimage.uniform_filter(x, size=3, mode="nearest")


def _box3_adjoint(g: FloatArray) -> FloatArray:
    """Adjoint of ``_box3``: scatter window weights back to the taps,
    folding replicated border taps onto their source pixels."""
    h, w = g.shape
    acc = np.zeros((h + 2, w + 2), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            acc[dy:dy + h, dx:dx + w] += g / 9.0
    out = acc[1:h + 1, 1:w + 1].copy()
    out[0, :] += acc[0, 1:w + 1]
    out[-1, :] += acc[h + 1, 1:w + 1]
    out[:, 0] += acc[1:h + 1, 0]
    out[:, -1] += acc[1:h + 1, w + 1]
    out[0, 0] += acc[0, 0]
    out[0, -1] += acc[0, w + 1]
    out[-1, 0] += acc[h + 1, 0]
    out[-1, -1] += acc[h + 1, w + 1]
    return out


def _ssim_channel(a: FloatArray, b: FloatArray) -> FloatArray:
    mu_a = _box3(a)
    mu_b = _box3(b)
    saa = _box3(a * a) - mu_a * mu_a
    sbb = _box3(b * b) - mu_b * mu_b
    sab = _box3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * sab + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a: Raster, b: Raster) -> Raster:
    """Windowed SSIM map of ``b`` against ``a``, per channel.

    3x3 mean-pooled windows with edge replication, C1 = 0.01^2, C2 = 0.03^2
    on intensities in [0, 1]. The map is clamped to [-1, 1] so that
    (1 - SSIM)/2 lies in [0, 1].
    """
    if a.shape != b.shape or a.channels != b.channels:
        raise DimensionError(f"ssim inputs differ: {a.data.shape} vs {b.data.shape}")
    da = a.data.astype(np.float64)
    db = b.data.astype(np.float64)
    if a.channels == 1:
        s = _ssim_channel(da, db)
    else:
        s = np.stack([_ssim_channel(da[..., c], db[..., c]) for c in range(3)], axis=-1)
    return Raster(np.clip(s, -1.0, 1.0).astype(np.float32))


def _per_pixel_photometric(tgt: Raster, recon: Raster, alpha: float) -> FloatArray:
    """(1-alpha) * L1 + (alpha/2) * (1 - SSIM), channel-averaged per pixel."""
    dt = tgt.data.astype(np.float64)
    dr = recon.data.astype(np.float64)
    l1 = np.abs(dt - dr)
    s = ssim(tgt, recon).data.astype(np.float64)
    term = (1.0 - alpha) * l1 + (alpha / 2.0) * (1.0 - s)
    if term.ndim == 3:
        term = term.mean(axis=2)
    return term


def photometric_loss(tgt: Raster, recon: Raster, validity: ValidityMask, alpha: float) -> LossTerm:
    """Validity-weighted mean of the L1 + SSIM photometric discrepancy."""
    if tgt.shape != recon.shape or tgt.channels != recon.channels:
        raise DimensionError("target and reconstruction shapes differ")
    if validity.shape != tgt.shape:
        raise DimensionError("validity mask shape differs from images")
    v = validity.weights.astype(np.float64)
    total_w = v.sum()
    support = int(np.count_nonzero(v))
    if support == 0:
        return LossTerm(0.0, 0)
    term = _per_pixel_photometric(tgt, recon, alpha)
    return LossTerm(float((v * term).sum() / total_w), support)


def photometric_loss_grad(
    tgt: Raster, recon: Raster, validity: ValidityMask, alpha: float
) -> FloatArray:
    """Analytic gradient of ``photometric_loss`` w.r.t. the reconstruction.

    Matches central finite differences away from the kinks of the L1 term
    and the SSIM clamp. The pose solver consumes this objective, so the
    gradient has to be exact, not an approximation of a smoothed surrogate.
    """
    v = validity.weights.astype(np.float64)
    total_w = v.sum()
    if total_w == 0:
        return np.zeros(recon.data.shape, dtype=np.float64)
    dt = tgt.data.astype(np.float64)
    dr = recon.data.astype(np.float64)
    channels = recon.channels
    if channels == 1:
        dt = dt[..., None]
        dr = dr[..., None]

    grad = np.zeros_like(dr)
    for c in range(dt.shape[2]):
        a = dt[..., c]
        b = dr[..., c]
        # L1 part: d|a - b|/db = -sign(a - b).
        grad_c = v * (1.0 - alpha) * (-np.sign(a - b)) / channels

        mu_a = _box3(a)
        mu_b = _box3(b)
        saa = _box3(a * a) - mu_a**2
        sbb = _box3(b * b) - mu_b**2
        sab = _box3(a * b) - mu_a * mu_b
        n1 = 2.0 * mu_a * mu_b + SSIM_C1
        n2 = 2.0 * sab + SSIM_C2
        d1 = mu_a**2 + mu_b**2 + SSIM_C1
        d2 = saa + sbb + SSIM_C2
        s = n1 * n2 / (d1 * d2)

        # Loss uses (alpha/2)(1 - clip(S)); gradient flows only through
        # unclamped windows.
        g_s = np.where(np.abs(s) < 1.0, -v * (alpha / 2.0) / channels, 0.0)
        ds_dm = (2.0 * mu_a * (n2 - n1) / (d1 * d2)
                 + s * 2.0 * mu_b * (1.0 / d2 - 1.0 / d1))
        ds_de = 2.0 * n1 / (d1 * d2)   # e = box(a*b)
        ds_df = -s / d2                # f = box(b*b)
        grad_c = grad_c + _box3_adjoint(g_s * ds_dm)
        grad_c = grad_c + a * _box3_adjoint(g_s * ds_de)
        grad_c = grad_c + 2.0 * b * _box3_adjoint(g_s * ds_df)
        grad[..., c] = grad_c

    grad = grad / total_w
    return grad[..., 0] if channels == 1 else grad


def composite_reconstruction(
    bg_warp: WarpResult,
    obj_warps: list[tuple[int, WarpResult, BoolArray]],
) -> WarpResult:
    """Combine the background warp with the warped dynamic objects.

    Each object claims the pixels of its warped mask. Background fills every
    unclaimed pixel and never overwrites an object pixel; where claims
    overlap, the object with the smaller warped depth wins (ties go to the
    lower instance id). A pixel's validity is that of its winning
    contributor, so claimed-but-unhit pixels stay holes rather than showing
    background texture inside an object silhouette.
    """
    h, w = bg_warp.image.shape
    out_img = bg_warp.image.data.astype(np.float64).copy()
    out_val = bg_warp.validity.weights.astype(np.float64).copy()
    claim_depth = np.full((h, w), np.inf)
    claimed = np.zeros((h, w), dtype=bool)

    for instance_id, warp, mask in sorted(obj_warps, key=lambda ow: ow[0]):
        if warp.image.shape != (h, w):
            raise DimensionError("object warp shape differs from background")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise DimensionError("warped mask shape differs from background")
        valid = warp.validity.weights > 0
        depth = warp.depth.data.astype(np.float64) if warp.depth is not None else np.zeros((h, w))
        eff_depth = np.where(valid, depth, np.inf)
        wins = mask & (~claimed | (eff_depth < claim_depth))
        out_img[wins] = warp.image.data[wins]
        out_val[wins] = warp.validity.weights[wins]
        claim_depth[wins] = eff_depth[wins]
        claimed |= mask
    return WarpResult(
        image=Raster(out_img.astype(np.float32)),
        validity=ValidityMask(out_val.astype(np.float32)),
    )


def geometric_loss(
    computed_depth_in_tgt: Raster, tgt_depth: Raster, valid_instance_mask: BoolArray
) -> LossTerm:
    """Mean normalized depth inconsistency |d^ - d| / (d^ + d) over the mask.

    Non-positive depths are excluded from the support. Pointwise values lie
    in [0, 1).
    """
    if computed_depth_in_tgt.shape != tgt_depth.shape:
        raise DimensionError("depth raster shapes differ")
    mask = np.asarray(valid_instance_mask, dtype=bool)
    if mask.shape != tgt_depth.shape:
        raise DimensionError("mask shape differs from depth rasters")
    a = computed_depth_in_tgt.data.astype(np.float64)
    b = tgt_depth.data.astype(np.float64)
    support = mask & (a > 0) & (b > 0)
    n = int(np.count_nonzero(support))
    if n == 0:
        return LossTerm(0.0, 0)
    diff = np.abs(a[support] - b[support]) / (a[support] + b[support])
    return LossTerm(float(diff.mean()), n)


def smoothness_loss(depth: Raster, image: Raster) -> LossTerm:
    """Edge-aware smoothness: squared depth gradients attenuated at image
    edges, (grad D * exp(-|grad I|))^2 with first-order forward differences.

    Depth is pre-normalized by its mean so the term cannot be gamed by
    global depth rescaling.
    """
    if depth.shape != image.shape:
        raise DimensionError("depth and image shapes differ")
    d = depth.data.astype(np.float64)
    positive = d > 0
    if not positive.any():
        return LossTerm(0.0, 0)
    d = d / d[positive].mean()
    img = image.data.astype(np.float64)
    if img.ndim == 2:
        img = img[..., None]

    terms = []
    n = 0
    if depth.width > 1:
        dd_u = d[:, 1:] - d[:, :-1]
        di_u = np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2)
        terms.append(((dd_u * np.exp(-di_u)) ** 2).sum())
        n += dd_u.size
    if depth.height > 1:
        dd_v = d[1:, :] - d[:-1, :]
        di_v = np.abs(img[1:, :] - img[:-1, :]).mean(axis=2)
        terms.append(((dd_v * np.exp(-di_v)) ** 2).sum())
        n += dd_v.size
    if n == 0:
        return LossTerm(0.0, 0)
    return LossTerm(float(sum(terms) / n), n)


def height_loss(
    depth: Raster, masks: InstanceMaskSet, priors: HeightPriors, fy: float
) -> LossTerm:
    """Object height constraint: per object, the mean-normalized L1 gap
    between masked depth and the pinhole height estimate fy * p_h / h,
    summed over objects.

    Ties an object's apparent pixel height to its depth, which blocks the
    infinite-depth degeneracy for objects moving with the camera.
    """
    d = depth.data.astype(np.float64)
    positive = d > 0
    if not positive.any():
        return LossTerm(0.0, 0)
    mean_depth = d[positive].mean()

    total = 0.0
    support = 0
    for instance_id, mask in masks.instances:
        count = int(np.count_nonzero(mask))
        if count == 0:
            continue
        h_px = priors.pixel_heights.get(instance_id)
        if h_px is None:
            rows = np.flatnonzero(mask.any(axis=1))
            h_px = float(rows[-1] - rows[0] + 1)
        if h_px <= 0:
            raise ValueError(f"object {instance_id} has non-positive pixel height")
        target = fy * priors.prior_height / h_px
        total += float(np.abs(d[mask] - target).mean()) / mean_depth
        support += count
    return LossTerm(total, support)


def total_loss(
    photometric: float,
    geometric: float,
    smoothness: float,
    height: float,
    weights: LossWeights,
) -> float:
    """Weighted combination of the four loss terms.

    With ``lam_h = 0`` this reduces to the three-term tuning objective.
    """
    terms = (photometric, geometric, smoothness, height)
    if not all(np.isfinite(t) for t in terms):
        raise NonFiniteLossError(f"non-finite loss terms: {terms}")
    return (weights.lam_pe * photometric + weights.lam_g * geometric
            + weights.lam_s * smoothness + weights.lam_h * height)
