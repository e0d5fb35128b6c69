"""Acquisition values: p-KGFN and the full-evaluation baselines.

Every value here is a deterministic function of the posterior, the
candidate and a :class:`BaseSampleSet`. Batched versions take candidates as
rows and process them in memory-bounded chunks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .gp import NodeGP
from .multistart import MultiStartConfig, maximize
from .network import CandidateInput, PreconditionError
from .sampling import BaseSampleSet, FantasyNode, NetworkPosterior, objective_paths

# max elements of the (B, I, J, A, n) intermediate per chunk
CHUNK_ELEMS = 3_000_000


@dataclass(frozen=True)
class DiscretizationConfig:
    N_T: int = 10
    N_L: int = 10
    r: float = 0.1
    include_incumbent: bool = True

    def __post_init__(self):
        if self.N_T < 0 or self.N_L < 0 or not 0 < self.r <= 1:
            raise ValueError("need N_T, N_L >= 0 and 0 < r <= 1")


@dataclass
class AcqConfig:
    I: int = 8
    J: int = 64
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    nu_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.I < 1 or self.J < 1:
            raise ValueError("I and J must be positive")


@dataclass(frozen=True)
class AcqResult:
    node: int
    input: Optional[CandidateInput]
    value: float


def _max_train(post: NetworkPosterior) -> int:
    return max(1, max(g.dataset.count for g in post.nodes))


def _chunks(B, per_row):
    size = max(1, int(CHUNK_ELEMS // max(per_row, 1)))
    for s in range(0, B, size):
        yield slice(s, min(B, s + size))


def fantasy_innovations(gp: NodeGP, Z, U):
    """Standardized ``y_fantasy - mu(z)`` for rows ``Z`` and normals ``U``.

    Fantasy observations are drawn from the predictive distribution, i.e.
    with the node's observation noise (zero in noise-free problems).
    """
    _, var, _ = gp.posterior_std_units(gp.normalize(Z))
    sd = np.sqrt(var + gp.hyperparams.noise_variance)
    return sd[:, None] * np.asarray(U, float)[None, :]


def _costs(spec, k, Z):
    c = spec.costs[k]
    if callable(c):
        return np.array([spec.cost(k, z) for z in Z])
    return np.full(Z.shape[0], spec.cost(k))


def pkgfn_gains(post: NetworkPosterior, k: int, Z, samples: BaseSampleSet, inner_set, nu_star: float):
    """Expected gain in the maximal posterior mean from observing node ``k`` at rows of ``Z``.

    This is the p-KGFN numerator before division by the evaluation cost.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    A = np.atleast_2d(np.asarray(inner_set, dtype=float))
    if A.shape[0] == 0:
        raise PreconditionError("inner set is empty")
    gp = post.nodes[k]
    U = samples.outer[:, 0]
    out = np.empty(Z.shape[0])
    per_row = samples.I * samples.J * A.shape[0] * _max_train(post)
    xs = A[None, None, :, :]
    for sl in _chunks(Z.shape[0], per_row):
        Zc = Z[sl]
        node = FantasyNode(gp, Zc[:, None, :], fantasy_innovations(gp, Zc, U))
        y = objective_paths(post, xs, samples.inner, {k: node})
        y = np.broadcast_to(y, (Zc.shape[0], samples.I, samples.J, A.shape[0]))
        out[sl] = y.mean(axis=2).max(axis=-1).mean(axis=-1)
    return out - nu_star


def pkgfn_values(post: NetworkPosterior, k: int, Z, samples: BaseSampleSet, inner_set,
                 nu_star: float, cost_scale: float = 1.0):
    """Cost-normalized SAA knowledge gradient of observing node ``k`` at rows of ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    cost = _costs(post.spec, k, Z) * cost_scale
    if np.any(~(cost > 0)):
        raise ValueError("evaluation cost must be positive")
    return pkgfn_gains(post, k, Z, samples, inner_set, nu_star) / cost


def pkgfn_value(post: NetworkPosterior, k: int, z, samples: BaseSampleSet, cfg: AcqConfig,
                inner_set) -> float:
    if cfg.nu_star is None:
        raise PreconditionError("nu_star must be cached before evaluating p-KGFN")
    zz = z.z() if isinstance(z, CandidateInput) else np.asarray(z, float)
    return float(pkgfn_values(post, k, zz.reshape(1, -1), samples, inner_set, cfg.nu_star)[0])


def one_shot_values(post: NetworkPosterior, k: int, V, parent_outputs, samples: BaseSampleSet,
                    nu_star: float):
    """One-shot objective over joint rows ``V`` = (x_I(k), x^(1), ..., x^(I))."""
    spec = post.spec
    V = np.atleast_2d(np.asarray(V, dtype=float))
    nI = len(spec.input_indices[k])
    d, I = spec.d, samples.I
    B = V.shape[0]
    po = np.broadcast_to(np.asarray(parent_outputs, float).reshape(1, -1), (B, len(spec.parents[k])))
    Z = np.concatenate([po, V[:, :nI]], axis=1)
    X = V[:, nI:].reshape(B, I, 1, d)
    cost = _costs(spec, k, Z)
    gp = post.nodes[k]
    U = samples.outer[:, 0]
    out = np.empty(B)
    per_row = I * samples.J * _max_train(post)
    for sl in _chunks(B, per_row):
        Zc = Z[sl]
        node = FantasyNode(gp, Zc[:, None, :], fantasy_innovations(gp, Zc, U))
        y = objective_paths(post, X[sl], samples.inner, {k: node})
        out[sl] = np.broadcast_to(y, (Zc.shape[0], I, samples.J, 1)).mean(axis=(1, 2, 3))
    return (out - nu_star) / cost


def kgfn_full_values(post: NetworkPosterior, X, samples: BaseSampleSet, inner_set, nu_star: float):
    """KG of a full network evaluation at rows of ``X``, per unit total cost.

    Fantasy ``i`` rolls one network path at ``x`` driven by the outer normal
    vector ``U[i]`` and conditions every node on its fantasized observation.
    """
    spec = post.spec
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.atleast_2d(np.asarray(inner_set, dtype=float))
    total = spec.total_cost()
    U = samples.outer
    I = samples.I
    out = np.empty(X.shape[0])
    per_row = I * samples.J * A.shape[0] * _max_train(post) * max(1, spec.K)
    for sl in _chunks(X.shape[0], per_row):
        Xc = X[sl]
        B = Xc.shape[0]
        ys, nodes = [], {}
        for l in range(spec.K):
            pieces = [ys[j] for j in spec.parents[l]]
            ctrl = Xc[:, list(spec.input_indices[l])]
            pieces.append(np.broadcast_to(ctrl[:, None, :], (B, I, ctrl.shape[1])))
            z = np.concatenate([p if p.ndim == 3 else p[..., None] for p in pieces], axis=-1)
            gp = post.nodes[l]
            mean, var, _ = gp.posterior_std_units(gp.normalize(z.reshape(B * I, -1)))
            innov = np.sqrt(var + gp.hyperparams.noise_variance).reshape(B, I) * U[None, :, l]
            ys.append(gp.y_offset + gp.y_scale * (mean.reshape(B, I) + innov))
            nodes[l] = FantasyNode(gp, z, innov)
        y = objective_paths(post, A[None, None, :, :], samples.inner, nodes)
        y = np.broadcast_to(y, (B, I, samples.J, A.shape[0]))
        out[sl] = y.mean(axis=2).max(axis=-1).mean(axis=-1)
    return (out - nu_star) / total


def kgfn_full_value(post, x, samples, cfg: AcqConfig, inner_set) -> float:
    if cfg.nu_star is None:
        raise PreconditionError("nu_star must be cached before evaluating KGFN")
    return float(kgfn_full_values(post, np.reshape(x, (1, -1)), samples, inner_set, cfg.nu_star)[0])


def eifn_values(post: NetworkPosterior, X, samples: BaseSampleSet, y_best: Optional[float]):
    """Monte Carlo expected improvement of the network objective over ``y_best``."""
    if y_best is None or not np.isfinite(y_best):
        raise PreconditionError("EIFN needs at least one observed objective value")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])
    for sl in _chunks(X.shape[0], samples.J * _max_train(post)):
        y = objective_paths(post, X[sl][:, None, None, :], samples.inner)
        y = np.broadcast_to(y, (X[sl].shape[0], 1, samples.J, 1))
        out[sl] = np.maximum(y - y_best, 0.0).mean(axis=2)[:, 0, 0]
    return out


def eifn_value(post, x, samples, y_best) -> float:
    return float(eifn_values(post, np.reshape(x, (1, -1)), samples, y_best)[0])


def realization_values(post: NetworkPosterior, X, w):
    """Objective along the fixed-normal path ``mu + sigma * w`` at rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, float).reshape(1, post.spec.K)
    y = objective_paths(post, X[:, None, None, :], w)
    return np.broadcast_to(y, (X.shape[0], 1, 1, 1))[:, 0, 0, 0]


def tsfn_suggest(post: NetworkPosterior, seed: int, ms: MultiStartConfig = MultiStartConfig()):
    """Maximizer of one posterior realization built from a single normal vector."""
    spec = post.spec
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(spec.K)
    raw, starts = ms.counts(spec.d)
    x, _ = maximize(lambda X: realization_values(post, X, w), spec.lower, spec.upper, rng,
                    raw, starts, ms.fd_step, ms.max_ascent_iters, **ms.stall_kwargs())
    return x


def ei_values(gp: NodeGP, X, y_best: float):
    """Closed-form expected improvement of a GP on the objective."""
    if gp.dataset.count == 0:
        raise PreconditionError("EI needs data")
    mean, var = gp.posterior(np.atleast_2d(X))
    sd = np.sqrt(var)
    imp = mean - y_best
    safe = np.where(sd > 0, sd, 1.0)
    u = imp / safe
    ei = sd * norm.pdf(u) + imp * norm.cdf(u)
    return np.where(sd > 0, ei, np.maximum(imp, 0.0))


def ei_value(gp: NodeGP, x, y_best: float) -> float:
    return float(ei_values(gp, np.reshape(x, (1, -1)), y_best)[0])


def kg_values(bb_post: NetworkPosterior, X, samples, inner_set, nu_star: float, cost: float = 1.0):
    """Discrete KG of a single GP on the objective (one-node network)."""
    if bb_post.nodes[0].dataset.count == 0:
        raise PreconditionError("KG needs data")
    return pkgfn_values(bb_post, 0, X, samples, inner_set, nu_star, cost_scale=cost / bb_post.spec.cost(0))


def kg_value(bb_post, x, samples, inner_set, nu_star: float, cost: float = 1.0) -> float:
    return float(kg_values(bb_post, np.reshape(x, (1, -1)), samples, inner_set, nu_star, cost)[0])
