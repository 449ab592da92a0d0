"""Direct photometric pose estimation over rigid motions.

Minimizes the Huber-robustified mean photometric residual between a target
image and the inverse warp of a source image, by damped Gauss-Newton
(Levenberg style) on the 6-parameter tangent space of rigid motions. The
Jacobian is analytic: the exact derivative of the bilinear sampling chain,
so it matches finite differences of the actual residual.

Alignment runs on the channel mean of RGB, one scalar residual per pixel.
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
    se3_step,
)
from .warp import bilinear_sample_with_grad, forward_warp, forward_warp_mask

_GRAD_EPS = 1e-12
_COST_DECREASE_EPS = 1e-15


class EmptyRegionError(ValueError):
    """The optimization region contains no pixels."""


class NoOverlapError(ValueError):
    """An object's warped mask does not overlap its target mask."""


@dataclass(frozen=True)
class PoseSolverConfig:
    max_iterations: int = 50
    step_tolerance: float = 1e-7
    damping_init: float = 1e-4
    huber_delta: float = 0.1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.step_tolerance <= 0 or self.damping_init <= 0 or self.huber_delta <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class PoseEstimate:
    """Solver output. ``pose`` maps target-frame camera coordinates into the
    source frame (the pose consumed by inverse warping).

    ``flags`` records degenerate conditions ("degenerate-texture",
    "all-invalid-warp") instead of raising mid-iteration.
    """

    pose: RigidPose
    final_residual: float
    iterations_used: int
    converged: bool
    flags: tuple[str, ...] = ()
    cost_trace: tuple[float, ...] = ()


def intensity(raster: Raster) -> FloatArray:
    """Channel-mean intensity as float64."""
    data = raster.data.astype(np.float64)
    return data if data.ndim == 2 else data.mean(axis=2)


def _huber_cost(r: FloatArray, delta: float) -> float:
    a = np.abs(r)
    quad = 0.5 * r**2
    lin = delta * (a - 0.5 * delta)
    return float(np.where(a <= delta, quad, lin).mean())


def _huber_weights(r: FloatArray, delta: float) -> FloatArray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, _GRAD_EPS))


def residual_jacobian(
    src_intensity: FloatArray,
    tgt_intensity: FloatArray,
    tgt_depth: FloatArray,
    region: BoolArray,
    intrinsics: CameraIntrinsics,
    pose_tgt_to_src: RigidPose,
) -> tuple[FloatArray, FloatArray, BoolArray]:
    """Per-pixel residual r = sampled_src - tgt and its 6-column Jacobian.

    The parameterization is a left-composed increment (v, omega): candidate
    poses are (exp(omega), v) applied before the current pose, translation
    components first. Returns full (H, W) grids plus the valid-pixel mask.
    """
    h, w = tgt_intensity.shape
    fx, fy = intrinsics.fx, intrinsics.fy
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = tgt_depth
    x = (u - intrinsics.cx) / fx * d
    y = (v - intrinsics.cy) / fy * d
    r_mat = pose_tgt_to_src.rotation
    t = pose_tgt_to_src.translation
    xp = r_mat[0, 0] * x + r_mat[0, 1] * y + r_mat[0, 2] * d + t[0]
    yp = r_mat[1, 0] * x + r_mat[1, 1] * y + r_mat[1, 2] * d + t[1]
    zp = r_mat[2, 0] * x + r_mat[2, 1] * y + r_mat[2, 2] * d + t[2]

    front = (d > 0) & (zp > 0) & region
    zs = np.where(front, zp, 1.0)
    us = fx * xp / zs + intrinsics.cx
    vs = fy * yp / zs + intrinsics.cy

    sampled, g_u, g_v, in_bounds = bilinear_sample_with_grad(src_intensity, us, vs)
    valid = front & in_bounds
    residual = np.where(valid, sampled - tgt_intensity, 0.0)

    # du/dX' and dv/dX' rows of the projection Jacobian.
    inv_z = 1.0 / zs
    a0 = fx * inv_z
    a2 = -fx * xp * inv_z**2
    b1 = fy * inv_z
    b2 = -fy * yp * inv_z**2
    # c = dI/dX' (chain through the sampled gradient); 3 components.
    c0 = g_u * a0
    c1 = g_v * b1
    c2 = g_u * a2 + g_v * b2
    # Translation block is c itself; rotation block is X' x c.
    jac = np.zeros((h, w, 6), dtype=np.float64)
    jac[..., 0] = c0
    jac[..., 1] = c1
    jac[..., 2] = c2
    jac[..., 3] = yp * c2 - zp * c1
    jac[..., 4] = zp * c0 - xp * c2
    jac[..., 5] = xp * c1 - yp * c0
    jac[~valid] = 0.0
    return residual, jac, valid


def _evaluate_cost(
    src_intensity: FloatArray,
    tgt_intensity: FloatArray,
    tgt_depth: FloatArray,
    region: BoolArray,
    intrinsics: CameraIntrinsics,
    pose: RigidPose,
    delta: float,
) -> tuple[float, int]:
    residual, _, valid = residual_jacobian(
        src_intensity, tgt_intensity, tgt_depth, region, intrinsics, pose)
    n = int(np.count_nonzero(valid))
    if n == 0:
        return 0.0, 0
    return _huber_cost(residual[valid], delta), n


def estimate_pose(
    src: Raster,
    tgt: Raster,
    tgt_depth: Raster,
    region: BoolArray,
    intrinsics: CameraIntrinsics,
    init: RigidPose | None = None,
    cfg: PoseSolverConfig | None = None,
) -> PoseEstimate:
    """Estimate the target-to-source pose by direct photometric alignment.

    ``region`` restricts the residual to a pixel subset (intersected with
    the warp's own validity). The returned pose minimizes the robust mean
    residual; ``converged`` means the accepted step norm fell below the
    configured tolerance before the iteration budget ran out.
    """
    if src.shape != tgt.shape or tgt_depth.shape != tgt.shape:
        raise DimensionError("source, target and depth must share one shape")
    region = np.asarray(region, dtype=bool)
    if region.shape != tgt.shape:
        raise DimensionError("region shape differs from images")
    if not region.any():
        raise EmptyRegionError("pose estimation needs a nonempty region")
    cfg = cfg or PoseSolverConfig()
    pose = init or RigidPose.identity()

    src_i = intensity(src)
    tgt_i = intensity(tgt)
    depth = tgt_depth.data.astype(np.float64)

    residual, jac, valid = residual_jacobian(src_i, tgt_i, depth, region, intrinsics, pose)
    n_valid = int(np.count_nonzero(valid))
    if n_valid == 0:
        return PoseEstimate(pose, 0.0, 0, False, flags=("all-invalid-warp",))
    if float(np.abs(jac[valid]).max(initial=0.0)) < _GRAD_EPS:
        cost = _huber_cost(residual[valid], cfg.huber_delta)
        return PoseEstimate(pose, cost, 0, False, flags=("degenerate-texture",))

    lam = cfg.damping_init
    cost = _huber_cost(residual[valid], cfg.huber_delta)
    trace = [cost]
    converged = False
    iterations = 0

    for _ in range(cfg.max_iterations):
        iterations += 1
        r = residual[valid]
        j = jac[valid]
        w = _huber_weights(r, cfg.huber_delta)
        jw = j * w[:, None]
        hess = j.T @ jw
        grad = jw.T @ r
        diag = np.diag(hess).copy()
        diag[diag < _GRAD_EPS] = _GRAD_EPS

        accepted = False
        for _ in range(12):
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            step_norm = float(np.linalg.norm(step))
            if step_norm < cfg.step_tolerance:
                converged = True
                accepted = True
                break
            candidate = se3_step(step[3:], step[:3], pose)
            cand_cost, cand_n = _evaluate_cost(
                src_i, tgt_i, depth, region, intrinsics, candidate, cfg.huber_delta)
            if cand_n > 0 and cand_cost < cost - _COST_DECREASE_EPS:
                pose = candidate
                cost = cand_cost
                trace.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if converged or not accepted:
            break
        residual, jac, valid = residual_jacobian(src_i, tgt_i, depth, region, intrinsics, pose)
        if not valid.any():
            break

    return PoseEstimate(pose, cost, iterations, converged, cost_trace=tuple(trace))


def estimate_object_pose(
    src: Raster,
    tgt: Raster,
    src_depth: Raster,
    obj_mask_t: BoolArray,
    obj_mask_tgt: BoolArray,
    ego: RigidPose,
    intrinsics: CameraIntrinsics,
    cfg: PoseSolverConfig | None = None,
) -> PoseEstimate:
    """Estimate one object's residual motion after cancelling camera motion.

    The object region is forward-warped from the source frame by ``ego``
    (image, depth and mask); the solver then aligns the warped object
    against the object's region in the target image. The returned pose Q is
    the residual motion in the target camera frame: composing ego first and
    Q second places the object at its observed target position, so a truly
    static object yields Q near identity.
    """
    obj_mask_t = np.asarray(obj_mask_t, dtype=bool)
    obj_mask_tgt = np.asarray(obj_mask_tgt, dtype=bool)
    if not obj_mask_t.any() or not obj_mask_tgt.any():
        raise EmptyRegionError("object masks must be nonempty")

    warped = forward_warp(src, src_depth, ego, intrinsics, src_mask=obj_mask_t)
    warped_mask = forward_warp_mask(obj_mask_t, src_depth, ego, intrinsics)
    if not (warped_mask & obj_mask_tgt).any():
        raise NoOverlapError("warped object mask has no overlap with the target mask")

    tgt_masked = tgt.data.astype(np.float64).copy()
    tgt_masked[~obj_mask_tgt] = 0.0
    hit = warped.validity.weights > 0
    assert warped.depth is not None
    return estimate_pose(
        src=Raster(tgt_masked.astype(np.float32)),
        tgt=warped.image,
        tgt_depth=warped.depth,
        region=hit,
        intrinsics=intrinsics,
        init=RigidPose.identity(),
        cfg=cfg,
    )
