"""Per-marker forest bank mapping a scope shape to a colon shape."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError
from .forest import ForestParams, predict_many, presort, train_forest
from .geometry import apply_transform, as_points
from .registration import IcpParams, icp
from .shapes import ColonShape, ScopeShape, featurize, featurize_many


@dataclass(frozen=True)
class SmootherParams:
    window: int = 5
    mode: str = "causal"

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise InvalidInputError("smoother window must be an integer >= 1")
        if self.mode != "causal":
            raise InvalidInputError(f"unsupported smoother mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class ShapeRegressor:
    """Forest ``m`` predicts colon marker ``m`` from the flattened scope shape."""

    forests: tuple
    n_scope_points: int
    center_features: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        forests = tuple(self.forests)
        if not forests:
            raise InvalidInputError("a shape regressor needs at least one forest")
        dim = 3 * self.n_scope_points
        for m, f in enumerate(forests):
            if f.feature_dim != dim:
                raise InvalidInputError(f"forest {m} has feature_dim {f.feature_dim}, expected {dim}")
        object.__setattr__(self, "forests", forests)

    @property
    def n_markers(self):
        return len(self.forests)

    def __eq__(self, other):
        if not isinstance(other, ShapeRegressor):
            return NotImplemented
        return (
            self.n_scope_points == other.n_scope_points
            and self.center_features == other.center_features
            and self.forests == other.forests
        )


def marker_seed(seed, m):
    ss = np.random.SeedSequence([int(seed), int(m)])
    return int(ss.generate_state(1, np.uint64)[0])


def training_arrays(training):
    """Pool every frame of every sequence into ``(scopes, colons)`` arrays."""
    if not training:
        raise InvalidInputError("no training sequences given")
    n = training[0].n_scope_points
    m = None
    scopes, colons = [], []
    for seq in training:
        if seq.n_scope_points != n:
            raise InvalidInputError(
                f"sequence {seq.id!r} has {seq.n_scope_points} scope points, expected {n}"
            )
        for f in seq.frames:
            if f.colon is None:
                raise InvalidInputError(f"sequence {seq.id!r} frame {f.t} has no colon shape")
            if m is None:
                m = len(f.colon)
            elif len(f.colon) != m:
                raise InvalidInputError(
                    f"sequence {seq.id!r} frame {f.t} has {len(f.colon)} markers, expected {m}"
                )
            scopes.append(f.scope.points)
            colons.append(f.colon.points)
    return np.stack(scopes), np.stack(colons)


def train_shape_regressor(training, forest_params=None, center_features=False, n_jobs=1):
    """Train one forest per colon marker on all frames of ``training``.

    Frames from every sequence are pooled unweighted. Marker ``m`` gets
    the forest seed derived from ``(forest_params.seed, m)``.
    """
    forest_params = forest_params or ForestParams()
    scopes, colons = training_arrays(list(training))
    X = featurize_many(scopes, center=center_features)
    order = presort(X)
    forests = []
    for m in range(colons.shape[1]):
        p = replace(forest_params, seed=marker_seed(forest_params.seed, m))
        forests.append(train_forest(X, colons[:, m, :], p, n_jobs=n_jobs, presorted=order))
    meta = {
        "seed": forest_params.seed,
        "forest_params": forest_params.to_dict(),
        "training_sequences": [s.id for s in training],
        "n_training_frames": int(X.shape[0]),
        # per-marker mean training position: the no-deformation baseline
        "rest_shape": colons.mean(axis=0).tolist(),
    }
    return ShapeRegressor(tuple(forests), scopes.shape[1], center_features, meta)


def _check_scope(r, pts):
    if len(pts) != r.n_scope_points:
        raise InvalidInputError(f"scope has {len(pts)} points, regressor expects {r.n_scope_points}")


def estimate_colon_shape(r, scope):
    """Predicted marker positions for a scope shape already in the reference frame."""
    pts = scope.points if isinstance(scope, ScopeShape) else as_points(scope, "scope")
    _check_scope(r, pts)
    x = featurize(pts, center=r.center_features)[None, :]
    return ColonShape(np.stack([predict_many(f, x)[0] for f in r.forests]))


def estimate_many(r, scopes):
    """Vectorized :func:`estimate_colon_shape` over a ``(T, N, 3)`` array."""
    scopes = np.asarray(scopes, dtype=np.float64)
    if scopes.ndim != 3 or scopes.shape[1:] != (r.n_scope_points, 3):
        raise InvalidInputError(f"expected (T, {r.n_scope_points}, 3) scope array, got {scopes.shape}")
    X = featurize_many(scopes, center=r.center_features)
    return np.stack([predict_many(f, X) for f in r.forests], axis=1)


def smooth_estimates(history, params=None):
    """Causal moving average of the newest ``params.window`` shapes."""
    params = params or SmootherParams()
    if len(history) == 0:
        raise InvalidInputError("smoothing history is empty")
    arrs = [h.points if isinstance(h, ColonShape) else np.asarray(h, dtype=np.float64) for h in history]
    m = arrs[0].shape
    for a in arrs:
        if a.shape != m:
            raise InvalidInputError(f"inconsistent marker count in history ({a.shape[0]} vs {m[0]})")
    recent = np.stack(arrs[-params.window:])
    # mean of offsets from the newest shape, clamped to the window's range:
    # a constant history comes back bit-exact and the result stays convex
    ref = recent[-1]
    out = ref + (recent - ref).mean(axis=0)
    return ColonShape(np.clip(out, recent.min(axis=0), recent.max(axis=0)))


class OnlineEstimator:
    """Single-stream estimator holding its own smoothing history."""

    def __init__(self, regressor, icp_target=None, icp_params=None, smoother_params=None):
        self.regressor = regressor
        self.icp_target = None if icp_target is None else as_points(icp_target, "icp_target")
        self.icp_params = icp_params or IcpParams()
        self.smoother_params = smoother_params or SmootherParams()
        self._history = []
        self.frame = 0

    def register(self, scope):
        pts = scope.points if isinstance(scope, ScopeShape) else as_points(scope, "scope")
        if self.icp_target is None:
            return pts
        try:
            res = icp(pts, self.icp_target, self.icp_params)
        except DegenerateGeometryError as exc:
            raise DegenerateGeometryError(exc.args[0], iteration=exc.iteration, frame=self.frame) from None
        return apply_transform(res.transform, pts)

    def update(self, scope):
        registered = self.register(scope)
        est = estimate_colon_shape(self.regressor, registered)
        self._history.append(est)
        if len(self._history) > self.smoother_params.window:
            del self._history[0]
        self.frame += 1
        return smooth_estimates(self._history, self.smoother_params)


def run_online(r, scope_stream, icp_target=None, icp_params=None, smoother_params=None):
    """Register, estimate and smooth each scope shape of a stream in order.

    ``icp_target`` is the reference point set each scope shape is aligned
    to; pass ``None`` when the stream is already in the reference frame.
    Output ``k`` depends only on inputs ``0..k``.
    """
    scope_stream = list(scope_stream)
    if not scope_stream:
        raise InvalidInputError("scope stream is empty")
    est = OnlineEstimator(r, icp_target, icp_params, smoother_params)
    return [est.update(s) for s in scope_stream]
