"""Pinhole projection, inverse warping (bilinear sampling) and forward
warping (splatting) of images and masks.

Inverse warping reconstructs the target view by sampling the source image at
locations computed from target depth and the target-to-source pose. Forward
warping scatters source pixels into the target view using source depth and
the source-to-target pose; collisions are resolved by a z-buffer.

Border policy: bilinear sampling is strict, a pixel is valid only when all
four taps land inside the source raster. Forward-warp holes stay holes and
are marked with validity 0; no inpainting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import (
    BoolArray,
    CameraIntrinsics,
    DimensionError,
    FloatArray,
    Raster,
    RigidPose,
    ValidityMask,
)


@dataclass(frozen=True)
class PixelProjection:
    """Per-pixel projection of a depth raster into another camera.

    ``u``, ``v`` are the projected pixel coordinates, ``z`` the transformed
    depth. ``valid`` is False where the input depth was invalid or the point
    lands behind the camera (z <= 0); coordinates there are zeroed, never
    silently used.
    """

    u: FloatArray
    v: FloatArray
    z: FloatArray
    valid: BoolArray


@dataclass(frozen=True)
class WarpResult:
    """Warped image plus per-pixel validity.

    ``depth`` carries the warped content's depth in the output view when the
    warp produces one (forward warps: z-buffer contents; zero where unhit).
    """

    image: Raster
    validity: ValidityMask
    depth: Raster | None = None


def _pixel_grid(width: int, height: int) -> tuple[FloatArray, FloatArray]:
    u = np.arange(width, dtype=np.float64)
    v = np.arange(height, dtype=np.float64)
    return np.meshgrid(u, v)


def project_pixels(depth: Raster, intrinsics: CameraIntrinsics, pose: RigidPose) -> PixelProjection:
    """Back-project every pixel with its depth, apply ``pose``, reproject.

    A pixel at (u, v) with depth d maps to the camera point
    d * K^-1 [u, v, 1]^T, is transformed rigidly, and lands at
    (fx x'/z' + cx, fy y'/z' + cy) with transformed depth z'.
    """
    if depth.channels != 1:
        raise ValueError("project_pixels expects a single-channel depth raster")
    d = depth.data.astype(np.float64)
    u, v = _pixel_grid(depth.width, depth.height)

    x = (u - intrinsics.cx) / intrinsics.fx * d
    y = (v - intrinsics.cy) / intrinsics.fy * d
    # Elementwise 3x3 transform; keeps reductions deterministic regardless of
    # BLAS threading.
    r = pose.rotation
    t = pose.translation
    xp = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
    yp = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
    zp = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]

    valid = (d > 0.0) & (zp > 0.0)
    safe_z = np.where(valid, zp, 1.0)
    up = np.where(valid, intrinsics.fx * xp / safe_z + intrinsics.cx, 0.0)
    vp = np.where(valid, intrinsics.fy * yp / safe_z + intrinsics.cy, 0.0)
    zp = np.where(valid, zp, 0.0)
    return PixelProjection(u=up, v=vp, z=zp, valid=valid)


def bilinear_sample(data: FloatArray, us: FloatArray, vs: FloatArray) -> tuple[FloatArray, BoolArray]:
    """Sample ``data`` (H,W) or (H,W,C) at float coordinates.

    Returns (values, in_bounds). Samples needing any out-of-bounds tap get
    value 0 and in_bounds False (zero-padding, strict validity).
    """
    h, w = data.shape[:2]
    in_bounds = (us >= 0.0) & (us <= w - 1.0) & (vs >= 0.0) & (vs <= h - 1.0)

    ucl = np.clip(us, 0.0, w - 1.0)
    vcl = np.clip(vs, 0.0, h - 1.0)
    # Clamp the base corner so exact right/bottom edges still have 4 taps.
    x0 = np.minimum(np.floor(ucl), w - 2.0).astype(np.int64) if w > 1 else np.zeros_like(ucl, dtype=np.int64)
    y0 = np.minimum(np.floor(vcl), h - 2.0).astype(np.int64) if h > 1 else np.zeros_like(vcl, dtype=np.int64)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fu = ucl - x0
    fv = vcl - y0

    w00 = (1.0 - fu) * (1.0 - fv)
    w10 = fu * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w11 = fu * fv
    if data.ndim == 3:
        w00 = w00[..., None]
        w10 = w10[..., None]
        w01 = w01[..., None]
        w11 = w11[..., None]
    vals = (w00 * data[y0, x0] + w10 * data[y0, x1]
            + w01 * data[y1, x0] + w11 * data[y1, x1])
    vals = np.where(in_bounds[..., None] if data.ndim == 3 else in_bounds, vals, 0.0)
    return vals, in_bounds


def bilinear_sample_with_grad(
    data: FloatArray, us: FloatArray, vs: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray, BoolArray]:
    """Bilinear sample of a 2D grid plus the interpolant's exact derivative.

    The returned du/dv are the derivatives of the piecewise-bilinear
    interpolant itself (computed from the same 4 taps), so finite differences
    of the sampled value match them to rounding error inside a cell.
    """
    h, w = data.shape
    in_bounds = (us >= 0.0) & (us <= w - 1.0) & (vs >= 0.0) & (vs <= h - 1.0)
    ucl = np.clip(us, 0.0, w - 1.0)
    vcl = np.clip(vs, 0.0, h - 1.0)
    x0 = np.clip(np.floor(ucl), 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(vcl), 0, max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fu = ucl - x0
    fv = vcl - y0

    g00 = data[y0, x0]
    g10 = data[y0, x1]
    g01 = data[y1, x0]
    g11 = data[y1, x1]
    top = g00 + fu * (g10 - g00)
    bot = g01 + fu * (g11 - g01)
    vals = top + fv * (bot - top)
    dval_du = (1.0 - fv) * (g10 - g00) + fv * (g11 - g01)
    dval_dv = bot - top

    vals = np.where(in_bounds, vals, 0.0)
    dval_du = np.where(in_bounds, dval_du, 0.0)
    dval_dv = np.where(in_bounds, dval_dv, 0.0)
    return vals, dval_du, dval_dv, in_bounds


def inverse_warp(
    src: Raster,
    tgt_depth: Raster,
    pose_tgt_to_src: RigidPose,
    intrinsics: CameraIntrinsics,
) -> WarpResult:
    """Reconstruct the target view by sampling ``src``.

    Every target pixel is back-projected with ``tgt_depth``, moved by
    ``pose_tgt_to_src`` into the source camera and bilinearly sampled.
    Out-of-bounds samples and invalid-depth pixels get validity 0.
    """
    if tgt_depth.shape != src.shape:
        raise DimensionError(
            f"target depth {tgt_depth.shape} does not match source {src.shape}")
    proj = project_pixels(tgt_depth, intrinsics, pose_tgt_to_src)
    vals, in_bounds = bilinear_sample(src.data.astype(np.float64), proj.u, proj.v)
    valid = proj.valid & in_bounds
    if src.data.ndim == 3:
        vals = np.where(valid[..., None], vals, 0.0)
    else:
        vals = np.where(valid, vals, 0.0)
    return WarpResult(
        image=Raster(vals.astype(np.float32)),
        validity=ValidityMask(valid.astype(np.float32)),
    )


def _splat_targets(proj: PixelProjection, width: int, height: int) -> tuple[np.ndarray, np.ndarray, BoolArray]:
    """Nearest-cell targets for forward splatting, with in-bounds filter."""
    ut = np.rint(proj.u).astype(np.int64)
    vt = np.rint(proj.v).astype(np.int64)
    ok = proj.valid & (ut >= 0) & (ut < width) & (vt >= 0) & (vt < height)
    return ut, vt, ok


def forward_warp(
    src: Raster,
    src_depth: Raster,
    pose_src_to_tgt: RigidPose,
    intrinsics: CameraIntrinsics,
    src_mask: BoolArray | None = None,
) -> WarpResult:
    """Splat source pixels into the target grid with z-buffering.

    Each valid source pixel lands on its nearest target cell; collisions are
    resolved by the (z', source row-major index) total order, so results are
    deterministic regardless of evaluation order. ``src_mask`` restricts the
    splat to a subset of source pixels. Unhit target pixels have validity 0.
    """
    if src_depth.shape != src.shape:
        raise DimensionError(
            f"source depth {src_depth.shape} does not match source {src.shape}")
    proj = project_pixels(src_depth, intrinsics, pose_src_to_tgt)
    h, w = src.shape
    ut, vt, ok = _splat_targets(proj, w, h)
    if src_mask is not None:
        ok = ok & np.asarray(src_mask, dtype=bool)

    flat_src = np.flatnonzero(ok.ravel())
    out_img = np.zeros(src.data.shape, dtype=np.float64)
    out_depth = np.zeros((h, w), dtype=np.float64)
    hit = np.zeros((h, w), dtype=bool)
    if flat_src.size:
        cells = (vt.ravel()[flat_src] * w + ut.ravel()[flat_src])
        zs = proj.z.ravel()[flat_src]
        # Sort by (z, source index); the first occurrence per cell wins.
        order = np.lexsort((flat_src, zs))
        cells_sorted = cells[order]
        uniq_cells, first = np.unique(cells_sorted, return_index=True)
        winners = flat_src[order[first]]
        src_flat = src.data.reshape(h * w, -1).astype(np.float64)
        out_img.reshape(h * w, -1)[uniq_cells] = src_flat[winners]
        out_depth.ravel()[uniq_cells] = zs[order[first]]
        hit.ravel()[uniq_cells] = True

    return WarpResult(
        image=Raster(out_img.astype(np.float32)),
        validity=ValidityMask(hit.astype(np.float32)),
        depth=Raster(out_depth.astype(np.float32)),
    )


def forward_warp_mask(
    mask: BoolArray,
    depth: Raster,
    pose: RigidPose,
    intrinsics: CameraIntrinsics,
) -> BoolArray:
    """Forward-warp a binary mask: OR-splat each set pixel to the 4 cells
    surrounding its projected location.

    The 4-cell splat keeps warped masks hole-free under sub-pixel motion,
    which matters for overlap scores; no z-buffer is needed among pixels of
    one object.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.shape:
        raise DimensionError(f"mask {mask.shape} does not match depth {depth.shape}")
    proj = project_pixels(depth, intrinsics, pose)
    h, w = depth.shape
    ok = proj.valid & mask
    out = np.zeros((h, w), dtype=bool)
    if not ok.any():
        return out
    us = proj.u[ok]
    vs = proj.v[ok]
    x0 = np.floor(us).astype(np.int64)
    y0 = np.floor(vs).astype(np.int64)
    x1 = np.ceil(us).astype(np.int64)
    y1 = np.ceil(vs).astype(np.int64)
    for xs, ys in ((x0, y0), (x1, y0), (x0, y1), (x1, y1)):
        inb = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        out[ys[inb], xs[inb]] = True
    return out


def computed_depth_in_target(
    src_depth: Raster,
    tgt_depth: Raster,
    pose_src_to_tgt: RigidPose,
    intrinsics: CameraIntrinsics,
) -> WarpResult:
    """Source depth expressed in the target frame, resampled onto its grid.

    Each source pixel's transformed depth z' is laid out on the source grid
    and then inverse-sampled exactly like an image (driven by target depth
    and the inverse pose). Validity requires all four taps to carry valid
    transformed depth.
    """
    proj = project_pixels(src_depth, intrinsics, pose_src_to_tgt)
    z_grid = np.where(proj.valid, proj.z, 0.0)
    indicator = proj.valid.astype(np.float64)

    back = project_pixels(tgt_depth, intrinsics, pose_src_to_tgt.inverse())
    z_samp, in_b = bilinear_sample(z_grid, back.u, back.v)
    ind_samp, _ = bilinear_sample(indicator, back.u, back.v)
    valid = back.valid & in_b & (ind_samp >= 0.999) & (z_samp > 0.0)
    z_samp = np.where(valid, z_samp, 0.0)
    return WarpResult(
        image=Raster(z_samp.astype(np.float32)),
        validity=ValidityMask(valid.astype(np.float32)),
    )
