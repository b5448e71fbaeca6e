"""Point-to-point ICP used to bring measured scope shapes into the reference frame."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError
from .geometry import RigidTransform, apply_transform, as_points, least_squares_align


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    initial_transform: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be an integer >= 1")
        if not self.convergence_tol > 0:
            raise InvalidInputError("convergence_tol must be > 0")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    final_rmsd: float
    iterations_used: int
    converged: bool
    # RMSD before the first iteration followed by the RMSD after each one
    rmsd_history: tuple = ()


def nearest_correspondences(source, target):
    """Index of the Euclidean-nearest target point for every source point.

    Exhaustive scan; ties resolve to the lowest target index.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    d2 = np.sum((src[:, None, :] - dst[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _matched_rmsd(pts, target):
    idx = nearest_correspondences(pts, target)
    return float(np.sqrt(np.mean(np.sum((pts - target[idx]) ** 2, axis=1)))), idx


def icp(source, target, params=None):
    """Rigidly register ``source`` onto the (unordered) point set ``target``.

    Alternates nearest-neighbour matching and a closed-form least-squares
    solve until the matched RMSD changes by less than
    ``params.convergence_tol`` or ``params.max_iterations`` is reached.
    """
    params = params or IcpParams()
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if len(src) < 3 or len(dst) < 3:
        raise InvalidInputError("ICP needs at least 3 source and 3 target points")

    total = params.initial_transform
    current = apply_transform(total, src)
    prev, idx = _matched_rmsd(current, dst)
    history = [prev]
    converged = False
    k = 0
    for k in range(1, params.max_iterations + 1):
        try:
            step = least_squares_align(current, dst[idx])
        except DegenerateGeometryError as exc:
            raise DegenerateGeometryError(str(exc), iteration=k) from None
        total = step.compose(total)
        current = apply_transform(total, src)
        cur, idx = _matched_rmsd(current, dst)
        history.append(cur)
        if abs(prev - cur) < params.convergence_tol:
            converged = True
            prev = cur
            break
        prev = cur
    return IcpResult(total, prev, k, converged, tuple(history))
