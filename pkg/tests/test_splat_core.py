import numpy as np
import pytest

from splatnav import (Camera, DegenerateSplatError, InvalidParameterError, Splat,
                      SplatSet, build_covariance, gaussian_weight, load_checkpoint,
                      project_covariance, save_checkpoint)
from splatnav.synthetic import frontal_camera, random_splats

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def test_build_covariance_identity():
    cov = build_covariance(IDENTITY_Q, np.array([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(cov, np.eye(3), atol=1e-12)


def test_build_covariance_diagonal():
    cov = build_covariance(IDENTITY_Q, np.array([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)


def test_build_covariance_z_rotation():
    # 90 degrees about z maps the x axis onto y: R S S^T R^T = diag(1, 4, 1)
    q = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
    cov = build_covariance(q, np.array([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)


def test_build_covariance_eigenvalues_are_squared_scales():
    rng = np.random.default_rng(7)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        s = rng.uniform(0.1, 3.0, size=3)
        cov = build_covariance(q, s)
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        evals = np.sort(np.linalg.eigvalsh(cov))
        np.testing.assert_allclose(evals, np.sort(s ** 2), atol=1e-9)


def test_build_covariance_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        build_covariance(np.array([1.0, 0, 0, np.nan]), np.ones(3))
    with pytest.raises(InvalidParameterError):
        build_covariance(2 * IDENTITY_Q, np.ones(3))
    with pytest.raises(InvalidParameterError):
        build_covariance(IDENTITY_Q, np.array([1.0, -1.0, 1.0]))


def _on_axis_splat(z, sigma):
    return Splat(np.array([0.0, 0.0, z]), IDENTITY_Q, np.full(3, sigma), 0.5,
                 np.array([1.0, 0.0, 0.0]))


def test_project_covariance_on_axis_isotropic():
    f, z, sigma = 100.0, 4.0, 0.3
    cam = Camera(fx=f, fy=f, cx=16, cy=16, width=32, height=32)
    cov = project_covariance(_on_axis_splat(z, sigma), cam)
    np.testing.assert_allclose(cov, (f / z) ** 2 * sigma ** 2 * np.eye(2), atol=1e-9)


def test_project_covariance_behind_camera_skips():
    cam = frontal_camera()
    assert project_covariance(_on_axis_splat(-1.0, 0.1), cam) is None
    assert project_covariance(_on_axis_splat(0.005, 0.1), cam) is None


def test_project_covariance_scales_linearly_with_fx():
    splat = _on_axis_splat(3.0, 0.2)
    cam1 = Camera(fx=80.0, fy=60.0, cx=16, cy=16, width=32, height=32)
    cam2 = Camera(fx=160.0, fy=60.0, cx=16, cy=16, width=32, height=32)
    c1 = project_covariance(splat, cam1)
    c2 = project_covariance(splat, cam2)
    assert np.isclose(c2[0, 0], 4.0 * c1[0, 0])
    assert np.isclose(c2[0, 1], 2.0 * c1[0, 1])
    assert np.isclose(c2[1, 1], c1[1, 1])


def test_project_covariance_symmetric_on_random_splats():
    rng = np.random.default_rng(3)
    splats = random_splats(40, rng)
    cam = frontal_camera()
    for i in range(len(splats)):
        cov = project_covariance(splats[i], cam)
        if cov is not None:
            assert abs(cov[0, 1] - cov[1, 0]) < 1e-9


def test_gaussian_weight_values():
    assert gaussian_weight([5.0, 5.0], np.eye(2), [5.0, 5.0]) == pytest.approx(1.0)
    assert gaussian_weight([0.0, 0.0], np.eye(2), [1.0, 0.0]) == pytest.approx(np.exp(-0.5))
    assert gaussian_weight([0.0, 0.0], np.eye(2), [3.0, 3.0]) == pytest.approx(np.exp(-9.0))


def test_gaussian_weight_monotone_along_ray():
    cov = np.array([[2.0, 0.4], [0.4, 1.0]])
    direction = np.array([0.3, 0.7])
    vals = [gaussian_weight([0, 0], cov, t * direction) for t in np.linspace(0, 5, 30)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_gaussian_weight_singular_raises():
    with pytest.raises(DegenerateSplatError):
        gaussian_weight([0, 0], np.zeros((2, 2)), [1, 1])


def test_splat_validation():
    with pytest.raises(InvalidParameterError):
        Splat(np.zeros(3), IDENTITY_Q, np.ones(3), 1.0, np.zeros(3))  # opacity not < 1
    with pytest.raises(InvalidParameterError):
        Splat(np.zeros(3), 2 * IDENTITY_Q, np.ones(3), 0.5, np.zeros(3))
    with pytest.raises(InvalidParameterError):
        Splat(np.zeros(3), IDENTITY_Q, np.array([0.0, 1.0, 1.0]), 0.5, np.zeros(3))


def test_camera_validation():
    with pytest.raises(InvalidParameterError):
        Camera(fx=-1, fy=1, cx=0, cy=0, width=8, height=8)
    bad = np.eye(4)
    bad[0, 1] = 0.5
    with pytest.raises(InvalidParameterError):
        Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8, world_to_camera=bad)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    splats = random_splats(17, rng)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, splats)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.means, splats.means)
    np.testing.assert_array_equal(loaded.rotations, splats.rotations)
    np.testing.assert_array_equal(loaded.scales, splats.scales)
    np.testing.assert_array_equal(loaded.opacities, splats.opacities)
    np.testing.assert_array_equal(loaded.colors, splats.colors)
