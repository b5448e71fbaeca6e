"""Rigid transforms and closed-form point-set alignment.

Point lists are handled as ``(n, 3)`` float arrays in millimeters.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError

_ORTHO_TOL = 1e-9
# Relative singular-value floor for the rank test in least_squares_align.
_RANK_RTOL = 1e-10


def as_points(pts, name="points"):
    """Return ``pts`` as a finite ``(n, 3)`` float64 array, n >= 1."""
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rotation followed by a translation: ``p -> R @ p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidInputError("transform contains non-finite values")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise InvalidInputError("rotation is not proper (det != +1)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t):
        return cls(np.eye(3), t)

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other):
        """Transform equivalent to applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def apply_transform(t, pts):
    pts = as_points(pts)
    return pts @ t.rotation.T + t.translation


def least_squares_align(source, target):
    """Proper rigid transform minimizing ``sum ||R s_i + t - t_i||^2``.

    Correspondence is positional. Uses the SVD of the cross-covariance with
    the smallest singular direction sign-flipped when the unconstrained
    optimum would be a reflection.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape != dst.shape:
        raise InvalidInputError(
            f"source and target lengths differ ({len(src)} vs {len(dst)})"
        )
    if len(src) < 3:
        raise InvalidInputError("at least 3 point pairs are required")

    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    h = (src - src_c).T @ (dst - dst_c)
    u, s, vt = np.linalg.svd(h)
    scale = max(np.abs(src - src_c).max(), np.abs(dst - dst_c).max(), 1.0)
    if s[1] <= _RANK_RTOL * scale * scale * len(src):
        raise DegenerateGeometryError(
            "point configuration is collinear or coincident (cross-covariance rank < 2)"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    # re-orthonormalize away the last few ulps so the invariant checks hold
    uu, _, vv = np.linalg.svd(rot)
    rot = uu @ np.diag([1.0, 1.0, np.linalg.det(uu @ vv)]) @ vv
    return RigidTransform(rot, dst_c - rot @ src_c)


def rmsd(a, b):
    a = as_points(a, "a")
    b = as_points(b, "b")
    if a.shape != b.shape:
        raise InvalidInputError(f"point lists differ in length ({len(a)} vs {len(b)})")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))
