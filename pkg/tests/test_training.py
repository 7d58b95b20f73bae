import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from bnngp.errors import ConfigError, InputError, ParameterError
from bnngp.kernels import PARAM_NAMES, HyperParams, kernel_diag, kernel_matrix
from bnngp.lowrank import nystrom_factorize, select_anchors_first
from bnngp.simulate import make_scenario
from bnngp.training import (
    PriorConfig,
    TrainConfig,
    fit,
    log_prior,
    log_prior_grad,
    map_grad,
    map_loss,
    nll,
    nll_grad,
    transform,
    transform_jacobian,
    untransform,
)

from conftest import random_theta

FLAT_BETA = dict(beta_alpha=(1.0, 1.0), beta_w=(1.0, 1.0))


def dense_nll(y, X, theta):
    K = kernel_matrix(X, theta) + theta.sigma_eps2 * np.eye(len(y))
    L = np.linalg.cholesky(K)
    a = sla.cho_solve((L, True), y)
    return 0.5 * y @ a + np.sum(np.log(np.diag(L))) + 0.5 * len(y) * math.log(2 * math.pi)


def small_problem(seed, n=120, I=4):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.5, 0.5, (n, I))
    th = random_theta(rng, 0.4, 1.6).replace(sigma_eps2=float(rng.uniform(0.05, 0.3)))
    y = rng.normal(size=n)
    return X, y, th


# --- prior -------------------------------------------------------------------


def test_flat_beta_contributes_nothing():
    pri = PriorConfig(**FLAT_BETA)
    a = log_prior(HyperParams(alpha=0.2, w=0.7), pri)
    b = log_prior(HyperParams(alpha=0.6, w=0.1), pri)
    assert a == b


def test_inv_gamma_hand_value():
    ig = {q: (3.0, 2.0) for q in ("eps", "a", "u", "b", "v")}
    pri = PriorConfig(inv_gamma=ig, **FLAT_BETA)
    # each unit variance contributes -(4 log 1 + 2/1) = -2
    assert log_prior(HyperParams(), pri) == pytest.approx(-10.0, abs=1e-14)


def test_prior_gradient_vanishes_at_mode():
    pri = PriorConfig()
    mode = 1.0 / 3.0
    th = HyperParams(mode, mode, mode, mode, mode, 0.5, 0.5)
    np.testing.assert_allclose(log_prior_grad(th, pri), 0.0, atol=1e-12)


def test_prior_gradient_matches_fd(rng):
    pri = PriorConfig(inv_gamma={q: (1.5, 0.7) for q in ("eps", "a", "u", "b", "v")}, beta_alpha=(3, 2))
    th = random_theta(rng)
    v = th.to_array()
    g = np.empty(7)
    for j in range(7):
        h = 1e-6 * v[j]
        up, dn = v.copy(), v.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (log_prior(HyperParams.from_array(up), pri) - log_prior(HyperParams.from_array(dn), pri)) / (2 * h)
    np.testing.assert_allclose(log_prior_grad(th, pri), g, rtol=1e-6)


def test_prior_rejects_boundary_and_bad_config():
    with pytest.raises(ParameterError):
        log_prior(HyperParams.unchecked(w=0.0), PriorConfig())
    with pytest.raises(ConfigError):
        PriorConfig(beta_w=(0.0, 1.0))
    with pytest.raises(ConfigError):
        PriorConfig(inv_gamma={"eps": (1, 1)})


# --- likelihood ----------------------------------------------------------------


def test_nll_scalar_cases():
    th = HyperParams(sigma_eps2=0.25)
    x = np.array([[0.1, 0.2]])
    f = nystrom_factorize(x, th, select_anchors_first(1, 1))
    v = kernel_matrix(x, th)[0, 0] + 0.25
    assert nll(np.array([0.0]), f) == pytest.approx(0.5 * math.log(v) + 0.5 * math.log(2 * math.pi), rel=1e-9)
    c = 1.7
    expected = c * c / (2 * v) + 0.5 * math.log(v) + 0.5 * math.log(2 * math.pi)
    assert nll(np.array([c]), f) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(InputError):
        nll(np.zeros(2), f)


def test_full_rank_nll_and_map_loss_match_dense():
    X, y, th = small_problem(3, n=200)
    f = nystrom_factorize(X, th, select_anchors_first(200, 200))
    assert abs(nll(y, f) - dense_nll(y, X, th)) <= 1e-6
    pri = PriorConfig()
    cfg = TrainConfig(rank=200)
    assert abs(map_loss(y, X, th, pri, cfg) - (dense_nll(y, X, th) - log_prior(th, pri))) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_map_grad_matches_finite_differences(seed):
    X, y, th = small_problem(seed)
    pri = PriorConfig()
    g = map_grad(y, X, th, pri, TrainConfig(rank=30))
    fd = map_grad(y, X, th, pri, TrainConfig(rank=30, gradient_mode="finite_difference"))
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6 * np.max(np.abs(fd)))


def test_nll_grad_zero_targets():
    # y = 0: the data-fit term vanishes, leaving half the trace of K^-1 dK
    X, _, th = small_problem(11, n=40)
    f = nystrom_factorize(X, th, select_anchors_first(40, 40))
    g = nll_grad(np.zeros(40), X, th, f)
    K = kernel_matrix(X, th) + th.sigma_eps2 * np.eye(40)
    Kinv = np.linalg.inv(K)
    assert g[0] == pytest.approx(0.5 * np.trace(Kinv), rel=1e-7)
    assert g[3] == pytest.approx(0.5 * Kinv.sum(), rel=1e-6)
    assert g[3] > 0


def test_map_grad_equals_nll_grad_in_shape_params_under_flat_beta():
    X, y, th = small_problem(5, n=60)
    cfg = TrainConfig(rank=20)
    f = nystrom_factorize(X, th, select_anchors_first(60, 20))
    g_map = map_grad(y, X, th, PriorConfig(**FLAT_BETA), cfg)
    g_nll = nll_grad(y, X, th, f)
    np.testing.assert_array_equal(g_map[5:], g_nll[5:])


def test_nugget_prior_pull_grows_with_scale():
    X, y, th = small_problem(6, n=60)
    cfg = TrainConfig(rank=20)

    def eps_grad(b_eps):
        ig = {q: (2.0, 1.0) for q in ("eps", "a", "u", "b", "v")}
        ig["eps"] = (2.0, b_eps)
        return map_grad(y, X, th, PriorConfig(inv_gamma=ig), cfg)[0]

    grads = [eps_grad(b) for b in (0.01, 0.1, 1.0, 10.0)]
    assert all(b < a for a, b in zip(grads, grads[1:]))


def test_w_gradient_sign_follows_generating_component():
    # data drawn from a mostly-smooth vs mostly-angular process pull w in opposite directions
    base = HyperParams(sigma_u2=4.0, sigma_v2=2.0, sigma_b2=0.1)
    signs = []
    for w_true in (0.95, 0.05):
        truth = base.replace(w=w_true)
        ds = make_scenario("custom", design="uniform", I=3, n=300, seed=21, theta_true=truth, eta=0.01)
        probe = truth.replace(w=0.5, sigma_eps2=ds.sigma_eps2_true)
        f = nystrom_factorize(ds.X_centered, probe, select_anchors_first(300, 300))
        signs.append(np.sign(nll_grad(ds.y, ds.X_centered, probe, f)[6]))
    assert signs == [-1.0, 1.0]


# --- transforms -------------------------------------------------------------------


def test_transform_unit_point_is_origin():
    np.testing.assert_allclose(transform(HyperParams()), 0.0, atol=1e-15)


def test_transform_roundtrip_bulk():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        th = HyperParams(*np.exp(rng.uniform(-4, 4, 5)), *rng.uniform(0.01, 0.99, 2))
        back = untransform(transform(th)).to_array()
        worst = max(worst, np.max(np.abs(back - th.to_array())))
    assert worst <= 1e-12


@given(st.lists(st.floats(-5, 5), min_size=7, max_size=7))
def test_untransform_is_interior(u):
    th = untransform(np.array(u))
    assert th.to_array()[:5].min() > 0 and 0 < th.alpha < 1 and 0 < th.w < 1
    np.testing.assert_allclose(transform(th), u, atol=1e-9)


def test_transform_jacobian_fd(rng):
    th = random_theta(rng)
    u = transform(th)
    jac = transform_jacobian(th)
    for j in range(7):
        du = np.zeros(7)
        du[j] = 1e-6
        fd = (untransform(u + du).to_array()[j] - untransform(u - du).to_array()[j]) / 2e-6
        assert jac[j] == pytest.approx(fd, rel=1e-7)
    np.testing.assert_allclose(jac[:5], th.to_array()[:5])


# --- config and fit ------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1e-3)
    with pytest.raises(ConfigError):
        TrainConfig(batch_mode="mini")
    with pytest.raises(ConfigError):
        TrainConfig(gradient_mode="autodiff")
    with pytest.raises(ConfigError):
        TrainConfig(rank=0)


def test_zero_learning_rate_keeps_theta0():
    X, y, th = small_problem(1, n=80)
    res = fit(y, X, th, config=TrainConfig(epochs=5, learning_rate=0.0, nugget_learning_rate=0.0,
                                            rank=20, nugget_eta=None))
    assert res.theta_hat == th
    assert np.all(res.loss_trajectory == res.loss_trajectory[0])
    assert len(res.loss_trajectory) == 5


def test_nugget_initialized_by_eta_rule():
    X, y, th = small_problem(2, n=50)
    res = fit(y, X, th, config=TrainConfig(epochs=0, rank=10, nugget_eta=0.04))
    assert res.theta0.sigma_eps2 == pytest.approx(0.04 * kernel_diag(X, th).mean(), rel=1e-14)
    assert res.theta_hat == res.theta0 and res.loss_trajectory.size == 0


def test_fit_deterministic_and_decreasing():
    X, y, th = small_problem(4, n=100)
    cfg = TrainConfig(epochs=30, learning_rate=0.02, nugget_learning_rate=0.02, rank=25,
                      anchor_strategy="kmeanspp", anchor_seed=3)
    a = fit(y, X, th, config=cfg)
    b = fit(y, X, th, config=cfg)
    assert a.theta_hat == b.theta_hat
    assert np.array_equal(a.loss_trajectory, b.loss_trajectory)
    assert np.array_equal(a.anchors.indices, b.anchors.indices)
    assert np.all(np.isfinite(a.loss_trajectory))
    assert a.loss_trajectory[-1] < a.loss_trajectory[0]


def test_tight_priors_pin_variances():
    rng = np.random.default_rng(8)
    n = 200
    X = rng.uniform(-0.5, 0.5, (n, 3))
    y = rng.normal(size=n)
    target = np.array([0.2, 0.7, 1.5, 0.4, 2.5])
    a_q = 1e5
    ig = {q: (a_q, (a_q + 1) * s) for q, s in zip(("eps", "a", "u", "b", "v"), target)}
    cfg = TrainConfig(epochs=400, learning_rate=0.05, nugget_learning_rate=0.05, rank=50)
    res = fit(y, X, HyperParams(), PriorConfig(inv_gamma=ig), cfg)
    est = res.theta_hat.to_array()[:5]
    np.testing.assert_allclose(est, target, rtol=0.05)


def test_fit_input_validation():
    X, y, th = small_problem(0, n=20)
    with pytest.raises(InputError):
        fit(y[:-1], X, th, config=TrainConfig(rank=5))
    with pytest.raises(ParameterError):
        fit(y, X, HyperParams.unchecked(alpha=1.0), config=TrainConfig(rank=5))


def test_param_order():
    assert PARAM_NAMES[0] == "sigma_eps2" and PARAM_NAMES[-1] == "w"
