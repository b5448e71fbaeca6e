"""Held-out error metrics against the rest-shape baseline."""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError
from .estimator import run_online


@dataclass
class EvaluationReport:
    sequence_id: str
    n_frames: int
    n_markers: int
    per_marker_mean_error: list
    per_marker_rmse: list
    overall_mean_error: float
    baseline_per_marker_mean_error: list
    baseline_overall_mean_error: float
    per_frame_error: list  # [frame][marker], mm
    baseline_per_frame_error: list
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def check_consistency(self, tol=1e-9):
        errs = np.asarray(self.per_frame_error)
        if np.any(errs < 0) or np.any(np.asarray(self.baseline_per_frame_error) < 0):
            raise AssertionError("negative error in report")
        if abs(errs.mean() - self.overall_mean_error) > tol:
            raise AssertionError("overall mean does not match the per-frame trace")


def rest_shape(regressor):
    rest = regressor.metadata.get("rest_shape")
    if rest is None:
        raise InvalidInputError("model carries no rest shape; retrain to evaluate against the baseline")
    return np.asarray(rest, dtype=np.float64)


def score(estimates, truth, baseline, sequence_id="", config=None):
    """Per-frame Euclidean marker errors of ``estimates`` and of ``baseline``."""
    estimates = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimates.shape != truth.shape:
        raise InvalidInputError(f"estimate shape {estimates.shape} != truth shape {truth.shape}")
    err = np.linalg.norm(estimates - truth, axis=2)
    base = np.linalg.norm(np.asarray(baseline)[None, :, :] - truth, axis=2)
    return EvaluationReport(
        sequence_id=sequence_id,
        n_frames=int(err.shape[0]),
        n_markers=int(err.shape[1]),
        per_marker_mean_error=err.mean(axis=0).tolist(),
        per_marker_rmse=np.sqrt((err**2).mean(axis=0)).tolist(),
        overall_mean_error=float(err.mean()),
        baseline_per_marker_mean_error=base.mean(axis=0).tolist(),
        baseline_overall_mean_error=float(base.mean()),
        per_frame_error=err.tolist(),
        baseline_per_frame_error=base.tolist(),
        config=config or {},
    )


def evaluate_sequence(regressor, seq, icp_target=None, icp_params=None, smoother_params=None, config=None):
    """Run the online pipeline over ``seq`` and score it against its truth.

    Returns ``(report, estimates)`` with estimates as a ``(T, M, 3)`` array.
    """
    if not seq.has_truth:
        missing = next(f.t for f in seq.frames if f.colon is None)
        raise InvalidInputError(f"sequence {seq.id!r} frame {missing} has no ground-truth colon shape")
    if seq.n_markers != regressor.n_markers:
        raise InvalidInputError(
            f"sequence {seq.id!r} has {seq.n_markers} markers, model predicts {regressor.n_markers}"
        )
    out = run_online(regressor, [f.scope for f in seq.frames], icp_target, icp_params, smoother_params)
    est = np.stack([c.points for c in out])
    return score(est, seq.colon_array(), rest_shape(regressor), seq.id, config), est


def aggregate(reports):
    """Frame-weighted pooling of several reports (one per held-out insertion)."""
    model = np.concatenate([np.asarray(r.per_frame_error) for r in reports])
    base = np.concatenate([np.asarray(r.baseline_per_frame_error) for r in reports])
    return {
        "n_folds": len(reports),
        "n_frames": int(model.shape[0]),
        "aggregate_mean_error": float(model.mean()),
        "aggregate_baseline_mean_error": float(base.mean()),
        "ratio_to_baseline": float(model.mean() / base.mean()) if base.mean() > 0 else None,
        "per_marker_mean_error": model.mean(axis=0).tolist(),
        "baseline_per_marker_mean_error": base.mean(axis=0).tolist(),
        "folds": [
            {
                "sequence_id": r.sequence_id,
                "n_frames": r.n_frames,
                "mean_error": r.overall_mean_error,
                "baseline_mean_error": r.baseline_overall_mean_error,
            }
            for r in reports
        ],
    }
