import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bnngp.errors import InputError
from bnngp.kernels import HyperParams, kernel_diag, kernel_matrix
from bnngp.simulate import (
    DesignSpec,
    ScenarioDataset,
    VecchiaConfig,
    calibrate_nugget,
    center,
    generate_design,
    make_scenario,
    scenario_grid,
    vecchia_conditionals,
    vecchia_sample,
)

from conftest import random_theta


# --- designs -----------------------------------------------------------------------


def test_uniform_norm_moment():
    X = center(generate_design(DesignSpec(10_000, 20, "uniform", seed=1)))
    assert np.mean(np.sum(X * X, axis=1)) == pytest.approx(20 / 12, rel=0.02)


@pytest.mark.parametrize("seed", range(3))
def test_stratified_spreads_norms(seed):
    sq = {}
    for design in ("uniform", "stratified"):
        X = center(generate_design(DesignSpec(10_000, 20, design, seed=seed)))
        sq[design] = np.var(np.sum(X * X, axis=1), ddof=1)
    assert sq["stratified"] > sq["uniform"]


@given(st.integers(1, 30), st.integers(1, 12), st.sampled_from(["uniform", "stratified"]), st.integers(0, 10**6))
def test_designs_in_unit_cube(n, I, design, seed):
    X = generate_design(DesignSpec(n, I, design, seed))
    assert X.shape == (n, I)
    assert np.all((X >= 0.0) & (X <= 1.0))
    assert np.array_equal(X, generate_design(DesignSpec(n, I, design, seed)))


def test_design_validation():
    with pytest.raises(InputError):
        DesignSpec(0, 3)
    with pytest.raises(InputError):
        DesignSpec(5, 3, "sobol")
    with pytest.raises(InputError):
        DesignSpec(5, 3, "stratified", strata=(0, 2))


def test_center():
    np.testing.assert_array_equal(center(np.full((1, 3), 0.5)), np.zeros((1, 3)))
    np.testing.assert_array_equal(center(np.array([[0.0, 1.0]])), np.array([[-0.5, 0.5]]))
    # centering twice is not the same as centering once
    assert not np.array_equal(center(center(np.array([[0.2]]))), center(np.array([[0.2]])))


# --- nugget --------------------------------------------------------------------------


def test_nugget_zero_and_linear(rng):
    X = rng.uniform(-0.5, 0.5, (300, 5))
    th = random_theta(rng)
    assert calibrate_nugget(X, th, 0.0) == 0.0
    a, b = calibrate_nugget(X, th, 0.04, batch_size=7), calibrate_nugget(X, th, 0.12, batch_size=7)
    assert b == pytest.approx(3 * a, rel=1e-14)
    assert a == pytest.approx(0.04 * np.mean(np.diag(kernel_matrix(X, th))), rel=1e-13)
    with pytest.raises(InputError):
        calibrate_nugget(X, th, -0.1)


@pytest.mark.parametrize("I,reported", [(20, 0.085310), (80, 0.150799)])
def test_nugget_reproduces_reported_scenarios(I, reported):
    X = center(generate_design(DesignSpec(10_000, I, "uniform", seed=11)))
    assert calibrate_nugget(X, HyperParams(), 0.04) == pytest.approx(reported, rel=0.01)


# --- Vecchia ---------------------------------------------------------------------------


def dense_conditionals(X, theta, f, start):
    K = kernel_matrix(X, theta)
    means, variances = [], []
    for i in range(start, X.shape[0]):
        Kp = K[:i, :i]
        k = K[:i, i]
        sol = np.linalg.solve(Kp, k)
        means.append(sol @ f[:i])
        variances.append(K[i, i] - k @ sol)
    return np.array(means), np.array(variances)


def test_full_neighbor_conditionals_match_dense():
    rng = np.random.default_rng(2)
    n = 200
    X = rng.uniform(-0.5, 0.5, (n, 3))
    th = HyperParams()
    cfg = VecchiaConfig(n_init=20, n_neighbors=n - 1, seed=0)
    f = vecchia_sample(X, th, cfg)
    mean, var = vecchia_conditionals(X, th, cfg, f)
    dmean, dvar = dense_conditionals(X, th, f, 20)
    assert np.max(np.abs(mean - dmean)) <= 1e-8
    assert np.max(np.abs(var - dvar)) <= 1e-8


def test_exact_block_covariance():
    X = np.random.default_rng(0).uniform(-0.5, 0.5, (5, 3))
    th = HyperParams()
    draws = np.array([vecchia_sample(X, th, VecchiaConfig(seed=s)) for s in range(20_000)])
    emp = np.cov(draws, rowvar=False)
    assert np.max(np.abs(emp - kernel_matrix(X, th))) <= 0.05


def test_exact_block_marginals_match_kernel_diag():
    # the initial block is an exact draw: f = L z with L L^T = K
    X = np.random.default_rng(1).uniform(-0.5, 0.5, (30, 2))
    th = HyperParams()
    f = vecchia_sample(X, th, VecchiaConfig(seed=3))
    assert f.shape == (30,)
    draws = np.array([vecchia_sample(X, th, VecchiaConfig(seed=s)) for s in range(4000)])
    np.testing.assert_allclose(draws.var(axis=0), kernel_diag(X, th), rtol=0.1)


def test_vanishing_process():
    th = HyperParams(sigma_b2=1e-20, sigma_v2=1e-20)
    X = np.random.default_rng(2).uniform(-0.5, 0.5, (40, 2))
    f = vecchia_sample(X, th, VecchiaConfig(n_init=10, n_neighbors=5, seed=1))
    assert np.max(np.abs(f)) < 1e-8


def test_vecchia_deterministic():
    X = np.random.default_rng(4).uniform(-0.5, 0.5, (80, 3))
    cfg = VecchiaConfig(n_init=20, n_neighbors=10, seed=9)
    assert np.array_equal(vecchia_sample(X, HyperParams(), cfg), vecchia_sample(X, HyperParams(), cfg))


def test_vecchia_config_validation():
    with pytest.raises(InputError):
        VecchiaConfig(n_init=0)


# --- scenarios -------------------------------------------------------------------------


def test_scenario_grid():
    assert scenario_grid("C1") == ("uniform", 20, 10_000)
    assert scenario_grid("C8", 0.04) == ("stratified", 80, 2000)
    assert scenario_grid("C1", 0.2) == ("uniform", 20, 2000)
    with pytest.raises(InputError):
        scenario_grid("C9")
    with pytest.raises(InputError):
        scenario_grid("C1", 0.0)


def test_small_scenario_is_exact_and_reproducible():
    a = make_scenario("C1", scale=0.02, seed=5)
    b = make_scenario("C1", scale=0.02, seed=5)
    assert a.provenance["exact"] and a.X_centered.shape == (200, 20)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.X_centered, b.X_centered)
    assert np.all(np.abs(a.X_centered) <= 0.5)
    assert a.sigma_eps2_true == pytest.approx(calibrate_nugget(a.X_centered, HyperParams()), rel=1e-14)


def test_zero_eta_gives_noise_free_targets():
    ds = make_scenario("custom", design="uniform", I=3, n=50, seed=1, eta=0.0)
    assert np.array_equal(ds.y, ds.f)


def test_custom_requires_shape():
    with pytest.raises(InputError):
        make_scenario("custom", n=10)


def test_noise_properties_large_n():
    ds = make_scenario("custom", design="uniform", I=20, n=10_000, seed=2,
                       vecchia=VecchiaConfig(n_init=100, n_neighbors=20))
    noise = ds.y - ds.f
    assert np.var(noise, ddof=1) == pytest.approx(ds.sigma_eps2_true, rel=0.15)
    assert abs(np.corrcoef(noise, ds.f)[0, 1]) <= 0.02


def test_csv_roundtrip(tmp_path):
    ds = make_scenario("custom", design="stratified", I=4, n=30, seed=3)
    path = tmp_path / "d.csv"
    sidecar = ds.to_csv(path)
    assert path.read_text().splitlines()[0] == "x_1,x_2,x_3,x_4,f,y"
    assert sidecar.exists()
    back = ScenarioDataset.from_csv(path)
    np.testing.assert_array_equal(back.X_centered, ds.X_centered)
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.theta_true == ds.theta_true
    assert back.sigma_eps2_true == ds.sigma_eps2_true
    assert back.provenance["seed"] == 3
