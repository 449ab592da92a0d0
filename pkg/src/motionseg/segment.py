"""Truly-dynamic object detection via warped-mask overlap, plus
small-object removal.

A potentially dynamic object is warped from the source frame into the target
frame under the estimated ego-motion. If the object is static the warped and
target masks overlap strongly; if it moves independently they diverge. The
overlap is scored with the Sorensen-Dice coefficient or IoU (Jaccard index),
and objects scoring below a threshold theta are classed as truly dynamic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .types import (
    BoolArray,
    CameraIntrinsics,
    DimensionError,
    InstanceMaskSet,
    Raster,
    RigidPose,
    mask_complement,
    mask_intersect,
    mask_union,
    pixel_count,
)
from .warp import forward_warp_mask

log = logging.getLogger(__name__)


class UndefinedOverlapError(ValueError):
    """Dice/IoU of two empty masks is undefined; the caller decides."""


def dice(a: BoolArray, b: BoolArray) -> float:
    """Sorensen-Dice coefficient 2|a n b| / (|a| + |b|), in [0, 1]."""
    inter = pixel_count(mask_intersect(a, b))
    total = pixel_count(a) + pixel_count(b)
    if total == 0:
        raise UndefinedOverlapError("dice of two empty masks is undefined")
    return 2.0 * inter / total


def iou(a: BoolArray, b: BoolArray) -> float:
    """Jaccard index |a n b| / |a u b|, in [0, 1]."""
    inter = pixel_count(mask_intersect(a, b))
    union = pixel_count(a) + pixel_count(b) - inter
    if union == 0:
        raise UndefinedOverlapError("iou of two empty masks is undefined")
    return inter / union


@dataclass(frozen=True)
class OverlapScore:
    """Dice and IoU of one instance's ego-warped mask against its target mask.

    ``missing_in_target`` marks instances absent from the target frame (score
    0 against an empty mask). ``undefined`` marks the degenerate case where
    both masks are empty; such instances cannot receive a motion estimate.
    """

    instance_id: int
    dice: float
    iou: float
    missing_in_target: bool = False
    undefined: bool = False


@dataclass(frozen=True)
class MotionClassification:
    """Outcome of theta filtering: a partition of the input instance ids."""

    dynamic_ids: tuple[int, ...]
    static_ids: tuple[int, ...]
    removed_small_ids: tuple[int, ...]
    scores: tuple[OverlapScore, ...] = field(default_factory=tuple)


def build_background_mask(masks_t: InstanceMaskSet, masks_tgt: InstanceMaskSet) -> BoolArray:
    """Pixels belonging to no instance in either frame:
    (1 - U masks_t) n (1 - U masks_tgt).
    """
    if (masks_t.width, masks_t.height) != (masks_tgt.width, masks_tgt.height):
        raise DimensionError("mask sets have different frame sizes")
    shape = (masks_t.height, masks_t.width)
    free_t = mask_complement(mask_union(masks_t.masks(), shape=shape))
    free_tgt = mask_complement(mask_union(masks_tgt.masks(), shape=shape))
    return mask_intersect(free_t, free_tgt)


def filter_small_objects(
    masks: InstanceMaskSet, min_frac: float
) -> tuple[InstanceMaskSet, list[int]]:
    """Drop instances covering strictly less than ``min_frac`` of the frame.

    The boundary is strict: an instance with pixel count exactly equal to
    min_frac * width * height is kept.
    """
    if not 0.0 <= min_frac <= 1.0:
        raise ValueError(f"min_frac must lie in [0, 1], got {min_frac}")
    threshold = min_frac * masks.width * masks.height
    removed = [i for i, m in masks.instances if pixel_count(m) < threshold]
    kept = masks.subset(set(masks.ids()) - set(removed))
    return kept, removed


def score_objects(
    masks_t: InstanceMaskSet,
    masks_tgt: InstanceMaskSet,
    depth_t: Raster,
    ego_pose: RigidPose,
    intrinsics: CameraIntrinsics,
) -> list[OverlapScore]:
    """Warp every source instance by the ego pose and score the overlap with
    its target-frame mask.

    Instances are matched across frames by instance id. Ids missing from the
    target score 0 and are flagged; if additionally the warped mask is empty
    the overlap is undefined and flagged as such.
    """
    scores = []
    for instance_id, mask in masks_t.instances:
        warped = forward_warp_mask(mask, depth_t, ego_pose, intrinsics)
        tgt_mask = masks_tgt.get(instance_id)
        missing = tgt_mask is None or pixel_count(tgt_mask) == 0
        if missing:
            if pixel_count(warped) == 0:
                scores.append(OverlapScore(instance_id, 0.0, 0.0,
                                           missing_in_target=True, undefined=True))
                continue
            scores.append(OverlapScore(instance_id, 0.0, 0.0, missing_in_target=True))
            continue
        try:
            d = dice(warped, tgt_mask)
            j = iou(warped, tgt_mask)
        except UndefinedOverlapError:
            scores.append(OverlapScore(instance_id, 0.0, 0.0, undefined=True))
            continue
        scores.append(OverlapScore(instance_id, d, j))
    return scores


def theta_filter(
    masks_t: InstanceMaskSet,
    masks_tgt: InstanceMaskSet,
    depth_t: Raster,
    ego_pose: RigidPose,
    intrinsics: CameraIntrinsics,
    theta: float,
    metric: str = "dice",
    max_objects: int = 20,
    removed_small_ids: tuple[int, ...] = (),
) -> MotionClassification:
    """Classify instances as truly dynamic or static.

    Instances are sorted by overlap score (descending, ties by ascending id)
    and only the first ``max_objects`` are motion candidates; the rest are
    classed static. Among the candidates, an instance is dynamic iff its
    score is strictly below ``theta``. Instances with undefined overlap are
    classed static with a warning. ``removed_small_ids`` are carried through
    so the output partitions the original instance set.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if max_objects < 1:
        raise ValueError(f"max_objects must be >= 1, got {max_objects}")
    if metric not in ("dice", "iou"):
        raise ValueError(f"metric must be 'dice' or 'iou', got {metric!r}")

    scores = score_objects(masks_t, masks_tgt, depth_t, ego_pose, intrinsics)
    keyed = sorted(scores, key=lambda s: (-getattr(s, metric), s.instance_id))
    candidates = keyed[:max_objects]
    beyond = keyed[max_objects:]

    dynamic: list[int] = []
    static: list[int] = [s.instance_id for s in beyond]
    for s in candidates:
        if s.undefined:
            log.warning("instance %d has empty warped and target masks; "
                        "classing it static", s.instance_id)
            static.append(s.instance_id)
        elif getattr(s, metric) < theta:
            dynamic.append(s.instance_id)
        else:
            static.append(s.instance_id)

    return MotionClassification(
        dynamic_ids=tuple(sorted(dynamic)),
        static_ids=tuple(sorted(static)),
        removed_small_ids=tuple(sorted(removed_small_ids)),
        scores=tuple(sorted(scores, key=lambda s: s.instance_id)),
    )


def updated_background_mask(
    masks_t: InstanceMaskSet,
    masks_tgt: InstanceMaskSet,
    classification: MotionClassification,
) -> BoolArray:
    """Background used for the updated ego-motion estimate.

    Only truly dynamic instances are excluded; static and removed-small
    instances rejoin the background.
    """
    dynamic = set(classification.dynamic_ids)
    shape = (masks_t.height, masks_t.width)
    dyn_t = mask_union([m for i, m in masks_t.instances if i in dynamic], shape=shape)
    dyn_tgt = mask_union([m for i, m in masks_tgt.instances if i in dynamic], shape=shape)
    return mask_complement(mask_union([dyn_t, dyn_tgt]))
