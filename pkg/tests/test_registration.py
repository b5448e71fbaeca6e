import numpy as np
import pytest

from colonforest.errors import DegenerateGeometryError, InvalidInputError
from colonforest.geometry import apply_transform, rmsd
from colonforest.registration import IcpParams, icp, nearest_correspondences
from colonforest.simulator import generate_phantom

from helpers import bounded_transform, colon_segment
from oracles import brute_nearest


def test_params_validation():
    with pytest.raises(InvalidInputError):
        IcpParams(max_iterations=0)
    with pytest.raises(InvalidInputError):
        IcpParams(convergence_tol=0)


def test_already_aligned():
    pts = colon_segment(12)
    res = icp(pts, pts)
    np.testing.assert_allclose(res.transform.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(res.transform.translation, 0, atol=1e-9)
    assert res.final_rmsd == pytest.approx(0, abs=1e-9)
    assert res.iterations_used == 1
    assert res.converged


def test_recovers_x_shift():
    target = colon_segment()
    res = icp(target + (2, 0, 0), target)
    np.testing.assert_allclose(res.transform.translation, (-2, 0, 0), atol=1e-6)
    assert res.final_rmsd < 1e-6


def test_reports_unconverged_when_capped():
    rng = np.random.default_rng(3)
    target = colon_segment()
    src = apply_transform(bounded_transform(rng), target)
    res = icp(src, target, IcpParams(max_iterations=1, convergence_tol=1e-12))
    assert res.iterations_used == 1
    assert not res.converged


@pytest.mark.parametrize("seed", range(25))
def test_rmsd_is_monotone(seed):
    rng = np.random.default_rng(seed)
    target = colon_segment(40)
    src = apply_transform(bounded_transform(rng, 45, 30), target[5:25]) + rng.normal(0, 1, (20, 3))
    res = icp(src, target, IcpParams(max_iterations=100, convergence_tol=1e-10))
    hist = np.array(res.rmsd_history)
    assert np.all(hist[1:] <= hist[:-1] + 1e-12)
    assert res.final_rmsd >= 0
    assert res.iterations_used <= 100


@pytest.mark.parametrize("seed", range(10))
def test_idempotent_on_converged_result(seed):
    rng = np.random.default_rng(seed)
    target = colon_segment()
    src = apply_transform(bounded_transform(rng), target) + rng.normal(0, 0.5, target.shape)
    params = IcpParams()
    first = icp(src, target, params)
    moved = apply_transform(first.transform, src)
    again = icp(moved, target, params)
    motion = rmsd(apply_transform(again.transform, moved), moved)
    assert motion < 10 * params.convergence_tol + 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_noise_free_recovery(seed):
    rng = np.random.default_rng(100 + seed)
    target = colon_segment()
    truth = bounded_transform(rng)
    res = icp(apply_transform(truth, target), target)
    recovered = apply_transform(res.transform, apply_transform(truth, target))
    assert rmsd(recovered, target) < 1e-6


def test_noisy_scope_points_against_centerline():
    phantom = generate_phantom()
    target = phantom.curve.position(np.linspace(0, phantom.length, 3000))
    finals = []
    for trial in range(100):
        rng = np.random.default_rng(trial)
        start = rng.uniform(0, phantom.length - 400)
        clean = phantom.curve.position(start + 80.0 * np.arange(6))
        res = icp(clean + rng.normal(0, 0.5, clean.shape), target)
        finals.append(res.final_rmsd)
    p95 = float(np.percentile(finals, 95))
    print(f"ICP noisy-scope 95th percentile final RMSD = {p95:.4f} mm")
    assert p95 <= 2 * 0.5


def test_degenerate_error_carries_iteration():
    pts = np.zeros((4, 3)) + np.array([[0, 0, 0], [1e-13, 0, 0], [0, 1e-13, 0], [0, 0, 1e-13]])
    target = colon_segment()
    with pytest.raises(DegenerateGeometryError) as info:
        icp(pts, target)
    assert info.value.iteration == 1


def test_nearest_examples():
    pts = colon_segment(7)
    assert nearest_correspondences(pts, pts).tolist() == list(range(7))
    assert nearest_correspondences([(0, 0, 0)], [(1, 0, 0), (-1, 0, 0)]).tolist() == [0]
    with pytest.raises(InvalidInputError):
        nearest_correspondences(np.zeros((0, 3)), pts)


@pytest.mark.parametrize("seed", range(10))
def test_nearest_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(20, 3))
    dst = rng.normal(size=(50, 3))
    # integer grid forces exact ties
    if seed % 2:
        src, dst = np.round(src * 2), np.round(dst * 2)
    assert nearest_correspondences(src, dst).tolist() == brute_nearest(src.tolist(), dst.tolist())
