import numpy as np
import pytest

from w2conj.measures import (
    ConfigurationError,
    GaussianPair,
    Sampler,
    bures_matrix,
    gaussian_ground_truth_map,
    get_task,
    sample,
    synthetic_task_registry,
    sym_sqrt,
)


def test_point_mass_is_zero_matrix():
    out = sample(Sampler("point_mass", 2), 3, seed=0)
    assert out.shape == (3, 2)
    assert np.array_equal(out, np.zeros((3, 2)))


def test_standard_normal_mean():
    out = sample(Sampler("standard_normal", 2), 100000, seed=1)
    # 3 sigma / sqrt(N) is about 0.0095
    assert np.all(np.abs(out.mean(axis=0)) < 0.02)


def test_ring_radius():
    out = Sampler("ring", 2, {"radius": 4.0, "std": 0.1}).sample(5000, seed=2)
    norms = np.linalg.norm(out, axis=1)
    assert np.all(np.abs(norms - 4.0) <= 5 * 0.1)


def test_sampling_is_deterministic():
    for task in synthetic_task_registry():
        a = task.beta.sample(257, (4, 5, 6))
        b = task.beta.sample(257, (4, 5, 6))
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a))
        assert a.shape == (257, task.dim)


def test_unknown_family():
    with pytest.raises(ConfigurationError):
        Sampler("banana", 2)


def test_bures_identity_and_scalar():
    I = np.eye(2)
    m = gaussian_ground_truth_map(GaussianPair(np.zeros(2), I, np.zeros(2), I))
    x = np.random.default_rng(0).normal(size=(5, 2))
    assert np.allclose(m(x), x, atol=1e-12)
    M = bures_matrix(I, 4 * I)
    assert np.allclose(M, 2 * I, atol=1e-12)


def test_bures_commuting_case():
    cov_a = np.diag([2.0, 4.0])
    cov_b = np.diag([1.0, 9.0])
    M = bures_matrix(cov_a, cov_b)
    # brute-force oracle: diagonal matrices commute, M = sqrt(cov_b / cov_a)
    assert np.allclose(M, np.diag(np.sqrt([0.5, 9.0 / 4.0])), atol=1e-12)
    assert np.max(np.abs(M @ M @ cov_a - cov_b)) <= 1e-10


def test_bures_property_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        cov_a, cov_b = a @ a.T + 0.5 * np.eye(4), b @ b.T + 0.5 * np.eye(4)
        M = bures_matrix(cov_a, cov_b)
        assert np.max(np.abs(M @ cov_a @ M - cov_b)) <= 1e-8
        assert np.allclose(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0


def test_sym_sqrt_against_eig():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    r = sym_sqrt(a)
    assert np.allclose(r @ r, a, atol=1e-12)


def test_non_spd_rejected():
    with pytest.raises(ConfigurationError):
        GaussianPair(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2), np.eye(2))


def test_registry_contract():
    reg = synthetic_task_registry()
    assert len(reg) >= 6
    names = {t.name for t in reg}
    for n in ("gauss_to_ring8", "checkerboard", "moons", "circles", "scurve", "gauss_to_gauss_2d"):
        assert n in names
    assert get_task("gauss_to_gauss_2d").ground_truth is not None
    assert get_task("moons").ground_truth is None
    with pytest.raises(ConfigurationError):
        get_task("nope")


@pytest.mark.parametrize("name", ["gauss_to_gauss_2d", "gauss_to_gauss_8d"])
def test_ground_truth_pushforward_moments(name):
    task = get_task(name)
    n = 100000
    x = task.alpha.sample(n, 9)
    y = task.ground_truth(x)
    mean_b = task.beta.params["mean"]
    cov_b = task.beta.params["cov"]
    se_mean = np.sqrt(np.diag(cov_b) / n)
    assert np.all(np.abs(y.mean(axis=0) - mean_b) <= 4 * se_mean)
    # standard error of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / n)
    d = np.diag(cov_b)
    se_cov = np.sqrt((np.outer(d, d) + cov_b ** 2) / n)
    assert np.all(np.abs(np.cov(y.T) - cov_b) <= 4 * se_cov)


def test_task_dims_agree():
    with pytest.raises(ConfigurationError):
        from w2conj.measures import TaskSpec
        TaskSpec("bad", Sampler("standard_normal", 2), Sampler("standard_normal", 3))
