"""Fixed-randomness Monte Carlo over the network posterior.

Sample arrays produced here use the axis layout ``(B, I, J, A)``:

* ``B`` - candidate batch (points being scored by an acquisition),
* ``I`` - fantasy models (1 when not fantasizing),
* ``J`` - inner base samples ``W``,
* ``A`` - design points ``x`` evaluated per candidate (inner set).

Root nodes only depend on ``x``, so their posteriors are evaluated once per
distinct design point and broadcast over ``J``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .gp import (
    DEFAULT_JITTER,
    HyperPrior,
    NodeGP,
    fit_node_gp,
    kernel_pairwise,
    prior_mode_hyperparams,
)
from .network import NetworkHistory, NetworkSpec


@dataclass(frozen=True, eq=False)
class BaseSampleSet:
    """Outer normals ``U`` (I, K) and inner normals ``W`` (J, K)."""

    outer: np.ndarray
    inner: np.ndarray
    seed: int = 0

    @property
    def I(self) -> int:
        return self.outer.shape[0]

    @property
    def J(self) -> int:
        return self.inner.shape[0]


def _sobol_normals(n, K, rng):
    sobol = qmc.Sobol(d=K, scramble=True, seed=rng)
    with warnings.catch_warnings():
        # non-power-of-two sample sizes are fine for our use
        warnings.simplefilter("ignore", UserWarning)
        u = sobol.random(n)
    return ndtri(np.clip(u, 1e-10, 1 - 1e-10))


def make_base_samples(I: int, J: int, K: int, seed: int = 0, qmc_inner: bool = True,
                      antithetic: bool = False, qmc_outer: bool = False) -> BaseSampleSet:
    """Draw the SAA randomness for one acquisition-optimization call.

    Inner samples come from inverse-CDF transformed scrambled Sobol points
    when ``qmc_inner``; outer samples are plain normal draws unless
    ``qmc_outer``. ``antithetic`` pairs every inner vector with its negation.
    """
    if min(I, J, K) < 1:
        raise ValueError("I, J and K must be positive")
    rng = np.random.default_rng(seed)
    outer = _sobol_normals(I, K, rng) if qmc_outer else rng.standard_normal((I, K))
    m = (J + 1) // 2 if antithetic else J
    inner = _sobol_normals(m, K, rng) if qmc_inner else rng.standard_normal((m, K))
    if antithetic:
        inner = np.concatenate([inner, -inner])[:J]
    return BaseSampleSet(outer, inner, seed)


class FantasyNode:
    """A node GP conditioned on fantasy observations, batched.

    ``z`` has shape (B, If, dim) with If in {1, I}; ``innovations`` (B, I)
    hold ``y_fantasy - mu(z)`` in standardized units. The fantasy posterior
    is the rank-1 update of the base posterior; it never refactorizes.
    """

    def __init__(self, gp: NodeGP, z, innovations):
        self.gp = gp
        z = np.asarray(z, dtype=float)
        self.zn = gp.normalize(z)
        B, If, dim = self.zn.shape
        _, var, V = gp.posterior_std_units(self.zn.reshape(-1, dim))
        self.v = V.reshape(B, If, -1)
        self.denom = var.reshape(B, If) + gp.diag_noise
        self.innov = np.asarray(innovations, dtype=float)

    def predict(self, points):
        gp = self.gp
        p = gp.normalize(points)
        lead = p.shape[:-1]
        Bp, Ip, Jp, Ap = lead
        mean, var, V = gp.posterior_std_units(p.reshape(-1, gp.dim))
        mean = mean.reshape(lead)
        var = var.reshape(lead)
        prior_cross = kernel_pairwise(gp.hyperparams, p, self.zn[:, :, None, None, :])
        if V.shape[1]:
            Vr = V.reshape(Bp, Ip, Jp * Ap, -1)
            red = np.matmul(Vr, self.v[..., None])[..., 0]
            cross = prior_cross - red.reshape(red.shape[:2] + (Jp, Ap))
        else:
            cross = prior_cross
        # an already-known point (zero variance, no noise) carries no information
        denom = self.denom[:, :, None, None]
        ok = denom > 1e-12 * gp.hyperparams.outputscale
        gain = np.where(ok, cross / np.where(ok, denom, 1.0), 0.0)
        mean = mean + gain * self.innov[:, :, None, None]
        var = np.maximum(var - gain * cross, 0.0)
        return gp.y_offset + gp.y_scale * mean, gp.y_scale**2 * var


@dataclass(frozen=True, eq=False)
class NetworkPosterior:
    """Independent node GPs over a network."""

    spec: NetworkSpec
    nodes: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(self.nodes) != self.spec.K:
            raise ValueError("need one GP per node")

    def replace(self, k: int, gp: NodeGP) -> "NetworkPosterior":
        nodes = list(self.nodes)
        nodes[k] = gp
        return NetworkPosterior(self.spec, nodes)


def node_input_transform(spec: NetworkSpec, history: NetworkHistory, k: int):
    """Affine map sending node ``k``'s raw inputs to roughly the unit cube."""
    lo, width = [], []
    box = spec.parent_ranges[k]
    for pos, j in enumerate(spec.parents[k]):
        if box is not None:
            a, b = box[pos]
        else:
            vals = history.outputs[j] or [0.0]
            a, b = min(vals), max(vals)
        lo.append(a)
        width.append(b - a if b - a > 1e-12 else 1.0)
    for i in spec.input_indices[k]:
        a, b = spec.bounds[i]
        lo.append(a)
        width.append(b - a if b - a > 0 else 1.0)
    return np.asarray(lo, float), np.asarray(width, float)


def fit_network(history: NetworkHistory, priors, restarts: int = 5, seed: int = 0,
                noise_variance=0.0, jitter: float = DEFAULT_JITTER) -> NetworkPosterior:
    """MAP-fit one GP per node from the history.

    ``priors`` is a single :class:`HyperPrior` or one per node;
    ``noise_variance`` a scalar or one per node (original units).
    """
    spec = history.spec
    K = spec.K
    if isinstance(priors, HyperPrior):
        priors = [priors] * K
    nv = np.broadcast_to(np.asarray(noise_variance, float), (K,))
    nodes = []
    for k in range(K):
        ds = history.dataset(k)
        xo, xs = node_input_transform(spec, history, k)
        if ds.count == 0:
            h = prior_mode_hyperparams(spec.node_dim(k), priors[k], float(nv[k]))
            nodes.append(NodeGP(h, ds, 0.0, 1.0, xo, xs, jitter, True))
            continue
        nodes.append(fit_node_gp(ds, priors[k], restarts, seed + 7919 * k, float(nv[k]), xo, xs, jitter))
    return NetworkPosterior(spec, nodes)


def _as_4d(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, 1, 1, d)
    elif x.ndim == 2:
        x = x[:, None, None, :]
    elif x.ndim == 3:
        x = x[:, None, :, :]
    return x


def sample_paths(post: NetworkPosterior, x, W, overrides: Optional[dict] = None):
    """Recursive sampling of all node outputs.

    ``x`` is (B, Ix, A, d) (lower-rank inputs are promoted: (P, d) becomes
    (P, 1, 1, d)); ``W`` is (J, K) or (B, J, K). Returns per-node arrays of
    shape broadcastable to (B, I, J, A). ``overrides`` maps node index to a
    model with a ``predict`` method (e.g. :class:`FantasyNode`).
    """
    spec = post.spec
    x = _as_4d(x, spec.d)
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        W = W[None]
    overrides = overrides or {}
    ys = []
    for k in range(spec.K):
        model = overrides.get(k, post.nodes[k])
        pieces = [ys[j][..., None] for j in spec.parents[k]]
        ii = list(spec.input_indices[k])
        if ii:
            pieces.append(x[:, :, None, :, :][..., ii])
        if len(pieces) == 1:
            z = pieces[0]
        else:
            shape = np.broadcast_shapes(*[p.shape[:-1] for p in pieces])
            z = np.concatenate([np.broadcast_to(p, shape + p.shape[-1:]) for p in pieces], axis=-1)
        mean, var = model.predict(z)
        ys.append(mean + np.sqrt(var) * W[:, None, :, None, k])
    return ys


def objective_paths(post: NetworkPosterior, x, W, overrides=None):
    ys = sample_paths(post, x, W, overrides)
    spec = post.spec
    if spec.outcome is None:
        return ys[-1]
    shape = np.broadcast_shapes(*[y.shape for y in ys])
    return spec.objective(np.stack([np.broadcast_to(y, shape) for y in ys], axis=-1))


def sample_network_path(post: NetworkPosterior, x, w):
    """One recursive sample ``(y_1..y_K)`` at design ``x`` with normals ``w``."""
    w = np.asarray(w, dtype=float).reshape(1, post.spec.K)
    ys = sample_paths(post, np.asarray(x, float).reshape(1, 1, 1, -1), w)
    return [float(np.asarray(y).reshape(-1)[0]) for y in ys]


@dataclass(frozen=True)
class PosteriorMeanEstimate:
    value: float
    paths: np.ndarray


def estimate_nu_batch(post: NetworkPosterior, X, samples: BaseSampleSet, chunk: int = 4096):
    """SAA estimate of the objective's posterior mean at rows of ``X`` (P, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        xs = X[s:s + chunk]
        y = objective_paths(post, xs[:, None, None, :], samples.inner)
        y = np.broadcast_to(y, (xs.shape[0], 1, samples.J, 1))
        out[s:s + chunk] = y.mean(axis=2)[:, 0, 0]
    return out


def estimate_nu(post: NetworkPosterior, x, samples: BaseSampleSet) -> PosteriorMeanEstimate:
    x = np.asarray(x, dtype=float).reshape(1, 1, 1, -1)
    y = objective_paths(post, x, samples.inner)
    paths = np.broadcast_to(y, (1, 1, samples.J, 1)).reshape(-1).copy()
    return PosteriorMeanEstimate(float(paths.mean()), paths)
