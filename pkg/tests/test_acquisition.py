import numpy as np
import pytest
from scipy.stats import norm

from oracles import discrete_kg, toy_chain_posterior, two_node_ei
from pkgfn.acquisition import (
    AcqConfig,
    ei_value,
    eifn_value,
    eifn_values,
    kg_value,
    kgfn_full_value,
    kgfn_full_values,
    pkgfn_value,
    pkgfn_values,
    realization_values,
    tsfn_suggest,
)
from pkgfn.gp import KernelHyperparams, NodeDataset, NodeGP, fantasy_condition
from pkgfn.multistart import MultiStartConfig
from pkgfn.network import CandidateInput, NetworkSpec, NetworkSpecError, PreconditionError
from pkgfn.sampling import NetworkPosterior, estimate_nu_batch, make_base_samples, objective_paths

FAST = MultiStartConfig(raw_samples_per_dim=50, starts_per_dim=3, max_ascent_iters=20)


def one_node(xs, ys, cost=1.0, ls=0.4, os=1.5, jitter=1e-6, noise=0.0):
    spec = NetworkSpec(parents=((),), input_indices=((0,),), bounds=[[-1.0, 1.0]], costs=(cost,))
    gp = NodeGP(KernelHyperparams(np.array([ls]), os, noise), NodeDataset(np.reshape(xs, (-1, 1)), np.asarray(ys, float)),
                jitter=jitter)
    return NetworkPosterior(spec, [gp])


def cos_node(**kw):
    x = np.random.default_rng(0).uniform(-1, 1, 4)
    return one_node(x, np.cos(3 * x), **kw)


def test_kg_reduction_matches_quadrature():
    post = cos_node()
    A = np.linspace(-1, 1, 41)[:, None]
    s = make_base_samples(512, 64, 1, seed=3, antithetic=True, qmc_outer=True)
    nu = estimate_nu_batch(post, A, s).max()
    Z = np.array([[-0.3], [0.05], [0.5], [0.95]])
    v = pkgfn_values(post, 0, Z, s, A, nu)
    oracle = np.array([discrete_kg(post.nodes[0], z, A) for z in Z])
    assert np.allclose(v, oracle, rtol=0.02)


def test_zero_information_at_observed_point():
    post = cos_node(jitter=0.0)
    s = make_base_samples(16, 64, 1, seed=0)
    A = np.vstack([[0.2], np.linspace(-1, 1, 9)[:, None]])
    nu = estimate_nu_batch(post, A, s).max()
    z = post.nodes[0].dataset.inputs[1]
    assert abs(pkgfn_value(post, 0, z, s, AcqConfig(nu_star=nu), A)) <= 1e-6


def test_numerator_non_negative_statistically():
    post = cos_node()
    s = make_base_samples(512, 64, 1, seed=1)
    A = np.linspace(-1, 1, 21)[:, None]
    nu_hat = estimate_nu_batch(post, A, s)
    nu = nu_hat.max()
    # per-fantasy terms: max over A of the fantasy estimate
    gp = post.nodes[0]
    z = np.array([0.3])
    terms = []
    mu_z, var_z = gp.posterior(z[None])
    for u in s.outer[:, 0]:
        y = mu_z[0] + np.sqrt(var_z[0]) * u
        terms.append(estimate_nu_batch(post.replace(0, fantasy_condition(gp, z, y)), A, s).max())
    terms = np.array(terms)
    v = pkgfn_values(post, 0, z[None], s, A, nu)[0]
    assert v >= -3 * terms.std(ddof=1) / np.sqrt(len(terms))


def test_fantasy_update_equals_refit():
    # Story: pkgfn via the rank-1 fantasy node equals appending each fantasy and rebuilding the GP
    post, _ = toy_chain_posterior()
    s = make_base_samples(6, 32, 2, seed=4)
    A = np.linspace(-4, 4, 9)[:, None]
    nu = estimate_nu_batch(post, A, s).max()
    for k, z in ((0, np.array([0.7])), (1, np.array([-0.4]))):
        gp = post.nodes[k]
        mu_z, var_z = gp.posterior(z[None])
        sd = np.sqrt(var_z[0] + gp.hyperparams.noise_variance * gp.y_scale**2)
        maxes = [estimate_nu_batch(post.replace(k, fantasy_condition(gp, z, mu_z[0] + sd * u)), A, s).max()
                 for u in s.outer[:, 0]]
        expected = (np.mean(maxes) - nu) / post.spec.cost(k)
        assert pkgfn_values(post, k, z[None], s, A, nu)[0] == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("gamma", [0.5, 2.0, 49.0])
def test_cost_scaling_divides_value(gamma):
    post, _ = toy_chain_posterior()
    scaled = NetworkPosterior(post.spec.with_costs([post.spec.costs[0], post.spec.costs[1] * gamma]), post.nodes)
    s = make_base_samples(4, 16, 2, seed=0)
    A = np.linspace(-4, 4, 5)[:, None]
    Z = np.linspace(-3, 3, 7)[:, None]
    base = pkgfn_values(post, 1, Z, s, A, 0.1)
    assert np.allclose(pkgfn_values(scaled, 1, Z, s, A, 0.1), base / gamma, rtol=1e-13, atol=0)


def test_nonpositive_callable_cost_is_rejected():
    post = cos_node()
    spec = NetworkSpec(parents=((),), input_indices=((0,),), bounds=[[-1.0, 1.0]], costs=(lambda z: -1.0,))
    s = make_base_samples(2, 4, 1)
    with pytest.raises(NetworkSpecError):
        pkgfn_values(NetworkPosterior(spec, post.nodes), 0, [[0.0]], s, [[0.0]], 0.0)


def test_pkgfn_requires_cached_nu_star_and_inner_set():
    post = cos_node()
    s = make_base_samples(2, 4, 1)
    with pytest.raises(PreconditionError):
        pkgfn_value(post, 0, np.array([0.0]), s, AcqConfig(), [[0.0]])
    with pytest.raises(PreconditionError):
        pkgfn_values(post, 0, [[0.0]], s, np.zeros((0, 1)), 0.0)


def test_candidate_input_accepted():
    post, _ = toy_chain_posterior()
    s = make_base_samples(4, 16, 2, seed=0)
    A = np.array([[0.0], [1.0]])
    c = CandidateInput(1, (0.5,), np.zeros(0))
    assert pkgfn_value(post, 1, c, s, AcqConfig(nu_star=0.0), A) == pkgfn_values(post, 1, [[0.5]], s, A, 0.0)[0]


def test_eifn_deterministic_cases():
    post, hist = toy_chain_posterior(n_obs=4, jitter=0.0)
    s = make_base_samples(1, 32, 2, seed=0)
    x, y = hist.inputs[0][2], hist.outputs[1][2]
    assert eifn_value(post, x, s, y + 0.5) == pytest.approx(0.0, abs=1e-6)
    assert eifn_value(post, x, s, y - 1.0) == pytest.approx(1.0, abs=1e-6)


def test_eifn_matches_quadrature():
    post, hist = toy_chain_posterior()
    s = make_base_samples(1, 4096, 2, seed=5, qmc_inner=False)
    y_best = max(hist.outputs[1])
    for x in (-2.5, 0.4, 3.1):
        paths = np.maximum(np.asarray(objective_paths(post, np.array([[x]]), s.inner)).reshape(-1) - y_best, 0)
        se = paths.std(ddof=1) / np.sqrt(paths.size)
        v = eifn_value(post, [x], s, y_best)
        assert v == pytest.approx(paths.mean(), abs=1e-12)
        assert abs(v - two_node_ei(post, x, y_best)) <= 3 * se + 1e-12


def test_eifn_precondition_and_sign():
    post, _ = toy_chain_posterior()
    s = make_base_samples(1, 64, 2, seed=0)
    with pytest.raises(PreconditionError):
        eifn_value(post, [0.0], s, None)
    assert np.all(eifn_values(post, np.linspace(-4, 4, 20)[:, None], s, 0.3) >= 0)


def test_kgfn_one_node_equals_pkgfn():
    post = cos_node(cost=3.0)
    s = make_base_samples(8, 32, 1, seed=2)
    A = np.linspace(-1, 1, 11)[:, None]
    Z = np.linspace(-1, 1, 5)[:, None]
    assert np.allclose(kgfn_full_values(post, Z, s, A, 0.2), pkgfn_values(post, 0, Z, s, A, 0.2), atol=1e-12)


def test_kgfn_zero_variance_and_cost_scaling():
    post, hist = toy_chain_posterior(n_obs=5, jitter=0.0)
    s = make_base_samples(8, 32, 2, seed=2)
    x_star = hist.inputs[0][0]
    A = np.vstack([x_star, np.array(hist.inputs[0][1:])])
    nu = estimate_nu_batch(post, A, s).max()
    assert abs(kgfn_full_value(post, hist.inputs[0][3], s, AcqConfig(nu_star=nu), A)) <= 1e-6
    half = NetworkPosterior(post.spec.with_costs([0.5, 24.5]), post.nodes)
    X = np.array([[0.1], [2.2]])
    assert np.allclose(kgfn_full_values(half, X, s, A, nu), 2 * kgfn_full_values(post, X, s, A, nu), rtol=1e-13)


def test_tsfn_bounds_determinism_and_diversity():
    post, _ = toy_chain_posterior()
    xs = [tsfn_suggest(post, seed, FAST) for seed in range(50)]
    assert all(-4 <= x[0] <= 4 for x in xs)
    assert np.array_equal(tsfn_suggest(post, 7, FAST), xs[7])
    assert len({round(float(x[0]), 6) for x in xs}) >= 2


def test_tsfn_zero_variance_returns_mean_argmax():
    # a flat posterior away from one bump: the realization is the mean when w is irrelevant
    post = one_node([0.5], [3.0], ls=0.3, jitter=0.0, os=1e-12)
    x = tsfn_suggest(post, 0, FAST)
    assert x[0] == pytest.approx(0.5, abs=1e-3)
    grid = np.linspace(-1, 1, 201)[:, None]
    assert realization_values(post, x, [0.0])[0] >= realization_values(post, grid, [0.0]).max() - 1e-9


def test_ei_closed_form():
    post = one_node([0.9], [0.0], ls=0.05, os=1.0)
    gp = post.nodes[0]
    m, v = gp.posterior(np.array([[-0.9]]))
    assert v[0] == pytest.approx(1.0, abs=1e-9)
    assert ei_value(gp, [-0.9], m[0]) == pytest.approx(norm.pdf(0), abs=1e-8)
    assert ei_value(gp, [-0.9], m[0]) == pytest.approx(0.39894, abs=1e-5)


def test_ei_at_incumbent_zero_variance():
    post = one_node([0.2, 0.6], [1.0, 2.0], jitter=0.0)
    assert ei_value(post.nodes[0], [0.6], 2.0) == pytest.approx(0.0, abs=1e-9)


def test_ei_and_kg_need_data():
    post = one_node(np.zeros(0), np.zeros(0))
    s = make_base_samples(2, 4, 1)
    with pytest.raises(PreconditionError):
        ei_value(post.nodes[0], [0.0], 0.0)
    with pytest.raises(PreconditionError):
        kg_value(post, [0.0], s, [[0.0]], 0.0)


def test_kg_quadratic_mean_matches_quadrature():
    x = np.array([-0.8, -0.1, 0.6])
    post = one_node(x, 1 - x**2, ls=0.6, os=1.0)
    A = np.linspace(-1, 1, 31)[:, None]
    s = make_base_samples(512, 64, 1, seed=9, antithetic=True, qmc_outer=True)
    nu = estimate_nu_batch(post, A, s).max()
    for z in (-0.5, 0.25, 0.9):
        v = kg_value(post, [z], s, A, nu, cost=2.0)
        assert v == pytest.approx(discrete_kg(post.nodes[0], [z], A) / 2.0, rel=0.02)
