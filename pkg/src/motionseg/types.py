"""Shared value types for the motion-segmentation pipeline.

Conventions used throughout the package:

- Pixel coordinates are (u, v) with u = column and v = row, origin at the
  top-left corner, and pixel centers at integer coordinates.
- Depth is the distance along the camera Z axis (not ray length).
- Depth values <= 0 mark invalid measurements; downstream operations carry
  an explicit validity bit instead of propagating NaNs.
- All types are immutable value objects after construction and never mutate
  their inputs, so they are safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, TypeAlias

import numpy as np
import numpy.typing as npt

FloatArray: TypeAlias = npt.NDArray[np.floating]
BoolArray: TypeAlias = npt.NDArray[np.bool_]


class DimensionError(ValueError):
    """Raised when rasters or masks with incompatible shapes are combined."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Raster:
    """2D grid of scalars (1 channel) or RGB triples (3 channels).

    ``data`` is row-major with shape (height, width) or (height, width, 3)
    and float32 precision semantics.
    """

    data: FloatArray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] == 3:
            pass
        else:
            raise ValueError(f"raster must be (H,W) or (H,W,3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster needs width >= 1 and height >= 1")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def valid_depth(self) -> BoolArray:
        """Validity bits for a depth raster: strictly positive values."""
        if self.channels != 1:
            raise ValueError("valid_depth applies to single-channel rasters")
        return self.data > 0.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> FloatArray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class RigidPose:
    """Rigid motion in 3D: x -> rotation @ x + translation.

    ``rotation`` must be orthonormal with determinant +1 (within 1e-6).
    """

    rotation: FloatArray
    translation: FloatArray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.3g})")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis_angle: Sequence[float], translation: Sequence[float]) -> "RigidPose":
        return RigidPose(rotation_exp(np.asarray(axis_angle, dtype=np.float64)),
                         np.asarray(translation, dtype=np.float64))

    def inverse(self) -> "RigidPose":
        r_inv = self.rotation.T
        return RigidPose(r_inv, -r_inv @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose applying ``other`` first, then ``self``: x -> self(other(x))."""
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def apply(self, points: FloatArray) -> FloatArray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix3x4(self) -> FloatArray:
        return np.hstack([self.rotation, self.translation.reshape(3, 1)])

    def is_identity(self, tol: float = 1e-9) -> bool:
        return (np.abs(self.rotation - np.eye(3)).max() <= tol
                and np.abs(self.translation).max() <= tol)


def rotation_exp(axis_angle: FloatArray) -> FloatArray:
    """Rodrigues' formula; Taylor fallback near zero angle."""
    w = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    wx, wy, wz = w
    s = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    if theta < 1e-10:
        return np.eye(3) + s + 0.5 * (s @ s)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * s + b * (s @ s)


def rotation_angle_deg(a: RigidPose, b: RigidPose) -> float:
    """Geodesic angle between the rotations of two poses, in degrees."""
    c = 0.5 * (np.trace(a.rotation.T @ b.rotation) - 1.0)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def se3_step(omega: FloatArray, v: FloatArray, pose: RigidPose) -> RigidPose:
    """Left-composed solver increment: (exp(omega), v) applied before ``pose``.

    The increment is a rotation about the current camera origin plus an
    independent translation, the chart the pose solver differentiates in.
    """
    r = rotation_exp(omega)
    return RigidPose(r @ pose.rotation, r @ pose.translation + np.asarray(v, dtype=np.float64))


@dataclass(frozen=True)
class InstanceMaskSet:
    """Labeled binary masks for one frame.

    Masks share one frame size, are pairwise disjoint, and carry unique
    positive instance ids.
    """

    width: int
    height: int
    instances: tuple[tuple[int, BoolArray], ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen: set[int] = set()
        coverage = np.zeros((self.height, self.width), dtype=np.int32)
        frozen = []
        for instance_id, mask in self.instances:
            if instance_id <= 0:
                raise ValueError(f"instance ids must be positive, got {instance_id}")
            if instance_id in seen:
                raise ValueError(f"duplicate instance id {instance_id}")
            seen.add(instance_id)
            m = np.asarray(mask, dtype=bool)
            if m.shape != (self.height, self.width):
                raise DimensionError(
                    f"mask for id {instance_id} has shape {m.shape}, "
                    f"expected {(self.height, self.width)}")
            coverage += m
            frozen.append((int(instance_id), _freeze(m)))
        if (coverage > 1).any():
            raise ValueError("instance masks must be pairwise disjoint")
        object.__setattr__(self, "instances", tuple(frozen))

    @staticmethod
    def from_label_map(labels: np.ndarray) -> "InstanceMaskSet":
        """Build from an integer grid where 0 = background, n = instance n."""
        lab = np.asarray(labels)
        ids = sorted(int(i) for i in np.unique(lab) if i > 0)
        h, w = lab.shape
        return InstanceMaskSet(w, h, tuple((i, lab == i) for i in ids))

    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.instances)

    def get(self, instance_id: int) -> BoolArray | None:
        for i, mask in self.instances:
            if i == instance_id:
                return mask
        return None

    def masks(self) -> tuple[BoolArray, ...]:
        return tuple(m for _, m in self.instances)

    def subset(self, keep_ids: Iterable[int]) -> "InstanceMaskSet":
        keep = set(keep_ids)
        return InstanceMaskSet(
            self.width, self.height,
            tuple((i, m) for i, m in self.instances if i in keep))

    def label_map(self) -> np.ndarray:
        labels = np.zeros((self.height, self.width), dtype=np.int32)
        for i, mask in self.instances:
            labels[mask] = i
        return labels


@dataclass(frozen=True)
class ValidityMask:
    """Per-pixel weights in [0, 1]; 0 marks pixels with no valid support."""

    weights: FloatArray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 2:
            raise ValueError(f"validity weights must be 2D, got shape {w.shape}")
        if (w < 0).any() or (w > 1).any():
            raise ValueError("validity weights must lie in [0, 1]")
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def _check_same_shape(grids: Sequence[np.ndarray]):
    shapes = {g.shape for g in grids}
    if len(shapes) > 1:
        raise DimensionError(f"mask shapes differ: {sorted(shapes)}")


def mask_union(masks: Sequence[BoolArray], shape: tuple[int, int] | None = None) -> BoolArray:
    """Pointwise OR over a list of binary grids; empty list gives all zeros.

    ``shape`` is required when the list is empty.
    """
    grids = [np.asarray(m, dtype=bool) for m in masks]
    if not grids:
        if shape is None:
            raise ValueError("mask_union of an empty list needs an explicit shape")
        return np.zeros(shape, dtype=bool)
    _check_same_shape(grids)
    out = grids[0].copy()
    for g in grids[1:]:
        out |= g
    return out


def mask_complement(mask: BoolArray) -> BoolArray:
    return ~np.asarray(mask, dtype=bool)


def mask_intersect(a: BoolArray, b: BoolArray) -> BoolArray:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_same_shape([a, b])
    return a & b


def pixel_count(mask: BoolArray) -> int:
    return int(np.count_nonzero(np.asarray(mask, dtype=bool)))
