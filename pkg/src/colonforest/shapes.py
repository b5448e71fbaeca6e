"""Scope and colon shape data model plus the scope featurization."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import as_points

DEFAULT_N_SCOPE_POINTS = 6
DEFAULT_N_MARKERS = 12
DEFAULT_JUMP_THRESHOLD = 50.0


def _frozen_points(points, name):
    arr = np.array(as_points(points, name), dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class _Shape:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_points(self.points, type(self).__name__))

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


class ScopeShape(_Shape):
    """Points along the instrument, tip (cecum side) first."""


class ColonShape(_Shape):
    """Marker positions along the colon, ordered cecum to anus."""


@dataclass(frozen=True)
class Frame:
    t: int
    timestamp: float
    scope: ScopeShape
    colon: Optional[ColonShape] = None


@dataclass(frozen=True)
class InsertionSequence:
    id: str
    frame_rate: float
    frames: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise InvalidInputError(f"sequence {self.id!r} has no frames")
        if not self.frame_rate > 0:
            raise InvalidInputError("frame_rate must be positive")
        n = len(frames[0].scope)
        m = None
        for f in frames:
            if len(f.scope) != n:
                raise InvalidInputError(
                    f"sequence {self.id!r} frame {f.t}: scope has {len(f.scope)} points, expected {n}"
                )
            if f.colon is not None:
                if m is None:
                    m = len(f.colon)
                elif len(f.colon) != m:
                    raise InvalidInputError(
                        f"sequence {self.id!r} frame {f.t}: colon has {len(f.colon)} markers, expected {m}"
                    )

    @property
    def n_scope_points(self):
        return len(self.frames[0].scope)

    @property
    def n_markers(self):
        for f in self.frames:
            if f.colon is not None:
                return len(f.colon)
        return None

    @property
    def has_truth(self):
        return all(f.colon is not None for f in self.frames)

    def __len__(self):
        return len(self.frames)

    def scope_array(self):
        return np.stack([f.scope.points for f in self.frames])

    def colon_array(self):
        if not self.has_truth:
            raise InvalidInputError(f"sequence {self.id!r} has frames without colon shapes")
        return np.stack([f.colon.points for f in self.frames])


def featurize(scope, center=False):
    """Flatten a scope shape to ``(x1, y1, z1, ..., xN, yN, zN)``.

    With ``center=True`` the shape centroid is subtracted first; this
    loses absolute position and is therefore off by default.
    """
    pts = scope.points if isinstance(scope, ScopeShape) else as_points(scope)
    if center:
        pts = pts - pts.mean(axis=0)
    return np.array(pts, dtype=np.float64).reshape(-1)


def featurize_many(scopes, center=False):
    """Row-stacked feature matrix for an ``(T, N, 3)`` array of scope shapes."""
    arr = np.asarray(scopes, dtype=np.float64)
    if center:
        arr = arr - arr.mean(axis=1, keepdims=True)
    return arr.reshape(arr.shape[0], -1).copy()


def defeaturize(values):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size % 3 or v.size == 0:
        raise InvalidInputError(f"feature vector length {v.size} is not a positive multiple of 3")
    return ScopeShape(v.reshape(-1, 3))


@dataclass(frozen=True)
class Issue:
    kind: str  # "jump" | "ordering" | "invariant"
    frame: int
    role: Optional[str] = None  # "scope" | "colon"
    index: Optional[int] = None
    message: str = ""


def validate_sequence(seq, jump_threshold=DEFAULT_JUMP_THRESHOLD, n_scope_points=None, n_markers=None):
    """Screen a sequence for suspicious frames without modifying it.

    A point is flagged when it lies more than ``jump_threshold`` mm from
    its last unflagged position, so a single-frame outlier is reported
    once rather than also on the frame where it returns.
    Returns a list of :class:`Issue`; empty means clean.
    """
    issues = []
    last_good = {}
    prev_ts = None
    for k, f in enumerate(seq.frames):
        if f.t != k:
            issues.append(Issue("ordering", k, message=f"frame index {f.t} at position {k}"))
        if prev_ts is not None and not f.timestamp > prev_ts:
            issues.append(
                Issue("ordering", k, message=f"timestamp {f.timestamp!r} does not increase on {prev_ts!r}")
            )
        prev_ts = f.timestamp
        if not np.isfinite(f.timestamp):
            issues.append(Issue("invariant", k, message="non-finite timestamp"))
        if n_scope_points is not None and len(f.scope) != n_scope_points:
            issues.append(
                Issue("invariant", k, "scope", message=f"{len(f.scope)} scope points, expected {n_scope_points}")
            )
        if f.colon is not None and n_markers is not None and len(f.colon) != n_markers:
            issues.append(
                Issue("invariant", k, "colon", message=f"{len(f.colon)} markers, expected {n_markers}")
            )
        for role, shape in (("scope", f.scope), ("colon", f.colon)):
            if shape is None:
                continue
            for i, p in enumerate(shape.points):
                key = (role, i)
                ref = last_good.get(key)
                if ref is not None:
                    dist = float(np.linalg.norm(p - ref))
                    if dist > jump_threshold:
                        issues.append(
                            Issue("jump", k, role, i, f"moved {dist:.3f} mm (threshold {jump_threshold} mm)")
                        )
                        continue
                last_good[key] = p
    return issues
