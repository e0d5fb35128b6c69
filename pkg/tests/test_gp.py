import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkgfn.gp import (
    DegenerateFitWarning,
    GammaPrior,
    HyperPrior,
    KernelHyperparams,
    NodeDataset,
    NodeGP,
    _neg_log_posterior,
    draw_node_sample,
    fantasy_condition,
    fit_node_gp,
    kernel_eval,
    kernel_matrix,
    log_posterior,
    map_fit,
    standardize,
)
from oracles import dense_posterior, m52_reference


def random_gp(rng, n, d, noise=0.0, jitter=1e-6):
    X = rng.uniform(-1, 1, size=(n, d))
    y = np.sin(3 * X).sum(1) + 0.1 * rng.standard_normal(n)
    h = KernelHyperparams(rng.uniform(0.3, 1.5, d), rng.uniform(0.5, 2.0), noise)
    mu, sd = standardize(y)
    return NodeGP(h, NodeDataset(X, y), mu, sd, jitter=jitter)


def test_kernel_eval_values():
    h = KernelHyperparams(np.ones(1), 1.0)
    assert kernel_eval(h, [0.3], [0.3]) == pytest.approx(1.0)
    assert kernel_eval(h, [0.0], [1.0]) == pytest.approx((1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5)), abs=1e-12)
    assert kernel_eval(h, [0.0], [1.0]) == pytest.approx(0.52400, abs=1e-5)
    assert kernel_eval(h, [0.0], [60.0]) < 1e-50
    h2 = KernelHyperparams(np.ones(1), 2.5)
    assert kernel_eval(h2, [1.0], [1.0]) == pytest.approx(2.5)


def test_kernel_eval_rejects_dimension_mismatch():
    h = KernelHyperparams(np.ones(2), 1.0)
    with pytest.raises(ValueError):
        kernel_eval(h, [0.0, 1.0], [0.0])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(lengthscales=np.array([0.0])),
        dict(lengthscales=np.array([1.0]), outputscale=-1.0),
        dict(lengthscales=np.array([1.0]), noise_variance=-0.1),
    ],
)
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        KernelHyperparams(**kwargs)


def test_gram_matrix_is_psd():
    rng = np.random.default_rng(1)
    for _ in range(10):
        d = rng.integers(1, 5)
        h = KernelHyperparams(rng.uniform(0.1, 2, d), rng.uniform(0.1, 3))
        X = rng.uniform(-2, 2, size=(10, d))
        K = kernel_matrix(h, X, X)
        assert np.allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_empty_dataset_gives_prior():
    h = KernelHyperparams(np.ones(2), 1.7)
    gp = NodeGP(h, NodeDataset.empty(2))
    mean, var = gp.posterior(np.random.default_rng(0).uniform(size=(4, 2)))
    assert np.allclose(mean, 0.0)
    assert np.allclose(var, 1.7)


def test_posterior_matches_dense_solve():
    rng = np.random.default_rng(2)
    gp = random_gp(rng, 5, 1)
    Q = rng.uniform(-1, 1, size=(10, 1))
    h = gp.hyperparams
    m_ref, v_ref = dense_posterior(gp.dataset.inputs, gp.dataset.outputs, Q, h.lengthscales,
                                   h.outputscale, gp.diag_noise, gp.y_offset, gp.y_scale)
    mean, var = gp.posterior(Q)
    assert np.allclose(mean, m_ref, atol=1e-10)
    assert np.allclose(var, v_ref, atol=1e-10)


def test_noise_free_interpolation():
    rng = np.random.default_rng(3)
    gp = random_gp(rng, 8, 2, jitter=0.0)
    mean, var = gp.posterior(gp.dataset.inputs)
    assert np.allclose(mean, gp.dataset.outputs, atol=1e-8)
    assert np.all(var <= 1e-8)


def test_posterior_rejects_non_finite_queries():
    gp = random_gp(np.random.default_rng(0), 4, 1)
    with pytest.raises(ValueError):
        gp.posterior(np.array([[np.nan]]))


def test_predict_keeps_leading_shape():
    gp = random_gp(np.random.default_rng(0), 4, 2)
    mean, var = gp.predict(np.zeros((3, 2, 5, 2)))
    assert mean.shape == var.shape == (3, 2, 5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12), d=st.integers(1, 3))
def test_variance_bounded_by_prior(seed, n, d):
    rng = np.random.default_rng(seed)
    gp = random_gp(rng, n, d)
    _, var = gp.posterior(rng.uniform(-2, 2, size=(15, d)))
    assert np.all(var >= 0)
    assert np.all(var <= gp.prior_variance + gp.diag_noise * gp.y_scale**2 + 1e-8)


def test_fantasy_condition_matches_rebuild():
    rng = np.random.default_rng(4)
    for _ in range(20):
        gp = random_gp(rng, int(rng.integers(1, 10)), 2)
        z = rng.uniform(-1, 1, size=2)
        y = float(rng.normal())
        f = fantasy_condition(gp, z, y)
        ref = gp.with_dataset(gp.dataset.append(z, y))
        Q = rng.uniform(-1, 1, size=(20, 2))
        for a, b in zip(f.posterior(Q), ref.posterior(Q)):
            assert np.allclose(a, b, atol=1e-8)


def test_fantasy_condition_interpolates_noise_free():
    gp = random_gp(np.random.default_rng(5), 6, 1, jitter=0.0)
    f = fantasy_condition(gp, [0.123], 2.5)
    mean, var = f.posterior(np.array([[0.123]]))
    assert mean[0] == pytest.approx(2.5, abs=1e-8)
    assert var[0] <= 1e-8


def test_fantasy_far_point_leaves_mean_unchanged():
    h = KernelHyperparams(np.array([0.1]), 1.0)
    gp = NodeGP(h, NodeDataset(np.array([[0.0], [0.2]]), np.array([1.0, -1.0])))
    f = fantasy_condition(gp, [50.0], 3.0)
    q = np.array([[0.1]])
    assert f.posterior(q)[0][0] == pytest.approx(gp.posterior(q)[0][0], abs=1e-8)


def test_fantasy_duplicate_noise_free_is_noop():
    gp = random_gp(np.random.default_rng(6), 5, 1, jitter=0.0)
    f = fantasy_condition(gp, gp.dataset.inputs[0], float(gp.dataset.outputs[0]))
    assert f is gp


def test_fantasy_rejects_non_finite():
    gp = random_gp(np.random.default_rng(0), 3, 1)
    with pytest.raises(ValueError):
        fantasy_condition(gp, [0.0], float("inf"))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_conditioning_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    gp = random_gp(rng, int(rng.integers(0, 8)) or 1, 2)
    f = fantasy_condition(gp, rng.uniform(-1, 1, 2), float(rng.normal()))
    Q = rng.uniform(-1.5, 1.5, size=(10, 2))
    assert np.all(f.posterior(Q)[1] <= gp.posterior(Q)[1] + 1e-8)


def test_draw_node_sample():
    h = KernelHyperparams(np.ones(1), 4.0)
    gp = NodeGP(h, NodeDataset.empty(1))
    assert draw_node_sample(gp, [0.5], 0.0) == pytest.approx(0.0)
    assert draw_node_sample(gp, [0.5], 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        draw_node_sample(gp, [0.5], float("nan"))


def test_draw_node_sample_monte_carlo_mean():
    gp = random_gp(np.random.default_rng(7), 6, 1)
    z = np.array([0.37])
    mean, var = gp.posterior(z[None])
    w = np.random.default_rng(8).standard_normal(5000)
    draws = np.array([draw_node_sample(gp, z, wi) for wi in w])
    assert abs(draws.mean() - mean[0]) < 4 * draws.std() / math.sqrt(w.size)


def test_gamma_prior_mode_and_logpdf():
    p = GammaPrior(3.0, 6.0)
    assert p.mode == pytest.approx(1 / 3)
    from scipy.stats import gamma

    assert p.logpdf(0.7) == pytest.approx(gamma(a=3.0, scale=1 / 6.0).logpdf(0.7))


def test_neg_log_posterior_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    X = rng.uniform(0, 1, size=(12, 3))
    y = rng.standard_normal(12)
    prior = HyperPrior()
    theta = np.log(np.array([0.4, 0.7, 1.3, 1.1]))
    _, g = _neg_log_posterior(theta, X, y, prior, 1e-4)
    eps = 1e-6
    fd = np.array([
        (_neg_log_posterior(theta + eps * e, X, y, prior, 1e-4)[0]
         - _neg_log_posterior(theta - eps * e, X, y, prior, 1e-4)[0]) / (2 * eps)
        for e in np.eye(4)
    ])
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)


def gp_draw(rng, X, ls, s=1.0):
    K = np.array([[m52_reference(a, b, [ls], s) for b in X] for a in X])
    return np.linalg.cholesky(K + 1e-8 * np.eye(len(X))) @ rng.standard_normal(len(X))


def test_map_fit_recovers_lengthscale():
    rng = np.random.default_rng(10)
    X = rng.uniform(0, 1, size=(40, 1))
    y = gp_draw(rng, X, 0.5)
    h = map_fit(NodeDataset(X, y), HyperPrior(), restarts=5, seed=0)
    assert 0.25 <= h.lengthscales[0] <= 1.0


def test_map_fit_more_restarts_never_worse():
    rng = np.random.default_rng(11)
    X = rng.uniform(0, 1, size=(15, 2))
    ds = NodeDataset(X, np.sin(6 * X[:, 0]) * np.cos(3 * X[:, 1]))
    prior = HyperPrior()
    h1 = map_fit(ds, prior, restarts=1, seed=3)
    h5 = map_fit(ds, prior, restarts=5, seed=3)
    assert log_posterior(ds, prior, h5) >= log_posterior(ds, prior, h1) - 1e-9


def test_map_fit_deterministic():
    rng = np.random.default_rng(12)
    X = rng.uniform(0, 1, size=(10, 2))
    ds = NodeDataset(X, X.sum(1) ** 2)
    a = map_fit(ds, HyperPrior(), restarts=3, seed=4)
    b = map_fit(ds, HyperPrior(), restarts=3, seed=4)
    assert np.array_equal(a.lengthscales, b.lengthscales)
    assert a.outputscale == b.outputscale


def test_single_point_fit_uses_prior_mode():
    ds = NodeDataset(np.array([[0.2, 0.4]]), np.array([1.5]))
    with pytest.warns(DegenerateFitWarning):
        h = map_fit(ds, HyperPrior(), restarts=2)
    assert np.allclose(h.lengthscales, 1 / 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gp = fit_node_gp(ds, HyperPrior())
    assert gp.degenerate


def test_map_fit_rejects_empty():
    with pytest.raises(ValueError):
        map_fit(NodeDataset.empty(1), HyperPrior())


def test_dataset_validation():
    with pytest.raises(ValueError):
        NodeDataset(np.zeros((3, 1)), np.zeros(2))
