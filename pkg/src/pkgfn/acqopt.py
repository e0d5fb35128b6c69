"""Maximizing acquisition values over nodes, parent tuples and inputs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .acquisition import (
    AcqResult,
    DiscretizationConfig,
    one_shot_values,
    pkgfn_gains,
    pkgfn_values,
    tsfn_suggest,
)
from .multistart import MultiStartConfig, maximize
from .network import CandidateInput, NetworkHistory, ParentBox, enumerate_candidates
from .sampling import BaseSampleSet, NetworkPosterior, estimate_nu_batch

SENTINEL = -1.0


@dataclass(frozen=True)
class Selection:
    node: int
    candidate: CandidateInput
    value: float
    node_values: tuple


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def recommend(post: NetworkPosterior, samples: BaseSampleSet, ms: MultiStartConfig, seed: int,
              extra_points=None):
    """Maximizer ``x*`` of the SAA posterior-mean estimate and its value."""
    spec = post.spec
    raw, starts = ms.counts(spec.d)
    rng = np.random.default_rng(seed)
    return maximize(lambda X: estimate_nu_batch(post, X, samples), spec.lower, spec.upper, rng,
                    raw, starts, ms.fd_step, ms.max_ascent_iters, **ms.stall_kwargs(),
                    extra_points=extra_points)


def local_points(x_star, lower, upper, n: int, r: float, rng):
    """Uniform points in the max-norm box of radius ``r * max width`` around ``x_star``, clipped."""
    rad = r * float(np.max(upper - lower))
    pts = x_star + rad * rng.uniform(-1.0, 1.0, size=(n, len(x_star)))
    return np.clip(pts, lower, upper)


def build_inner_set(post: NetworkPosterior, x_star, cfg: DiscretizationConfig = DiscretizationConfig(),
                    seed: int = 0, ms: MultiStartConfig = MultiStartConfig()):
    """Discrete stand-in for the continuous inner maximization.

    Row 0 is always ``x_star``; exact duplicates are dropped.
    """
    spec = post.spec
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if not spec.in_bounds(x_star):
        raise ValueError("x_star outside the domain")
    rows = [x_star]
    rows += [tsfn_suggest(post, _seed(seed, 1, t), ms) for t in range(cfg.N_T)]
    if cfg.N_L:
        rng = np.random.default_rng(_seed(seed, 2))
        rows += list(local_points(x_star, spec.lower, spec.upper, cfg.N_L, cfg.r, rng))
    out, seen = [], set()
    for r in rows:
        key = r.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(r)
    return np.vstack(out)


def maximize_node_acq(post: NetworkPosterior, k: int, history: NetworkHistory, samples: BaseSampleSet,
                      inner_set, nu_star: float, ms: MultiStartConfig = MultiStartConfig(),
                      seed: int = 0) -> AcqResult:
    """Best candidate input for node ``k`` under p-KGFN, or the sentinel."""
    spec = post.spec
    nI = len(spec.input_indices[k])
    ii = list(spec.input_indices[k])
    nP = len(spec.parents[k])
    cands = enumerate_candidates(spec, history, k)
    rng = np.random.default_rng(_seed(seed, k))
    # with a constant cost the maximizer of the gain is the maximizer of the value,
    # and optimizing the gain keeps the search path independent of the cost level
    const = not callable(spec.costs[k])
    scale = spec.cost(k) if const else 1.0

    def f(Z):
        if const:
            return pkgfn_gains(post, k, Z, samples, inner_set, nu_star)
        return pkgfn_values(post, k, Z, samples, inner_set, nu_star)

    if isinstance(cands, ParentBox):
        lo = np.concatenate([cands.bounds[:, 0], spec.lower[ii]])
        hi = np.concatenate([cands.bounds[:, 1], spec.upper[ii]])
        raw, starts = ms.counts(nP + nI)
        z, v = maximize(f, lo, hi, rng, raw, starts, ms.fd_step, ms.max_ascent_iters, **ms.stall_kwargs())
        return AcqResult(k, CandidateInput(k, tuple(float(t) for t in z[:nP]), z[nP:]), v / scale)
    if not cands:
        return AcqResult(k, None, SENTINEL)
    if nI == 0:
        vals = f(np.asarray(cands, dtype=float).reshape(len(cands), nP))
        i = int(np.argmax(vals))
        return AcqResult(k, CandidateInput(k, cands[i], np.zeros(0)), float(vals[i]) / scale)
    raw, starts = ms.counts(nI)
    best = None
    for t in cands:
        tt = np.asarray(t, dtype=float)

        def g(X, tt=tt):
            return f(np.concatenate([np.broadcast_to(tt, (X.shape[0], nP)), X], axis=1))

        x, v = maximize(g, spec.lower[ii], spec.upper[ii], rng, raw, starts, ms.fd_step,
                        ms.max_ascent_iters, **ms.stall_kwargs())
        if best is None or v > best.value:
            best = AcqResult(k, CandidateInput(k, tuple(t), x), v)
    return AcqResult(k, best.input, best.value / scale)


def select_next(post: NetworkPosterior, history: NetworkHistory, samples: BaseSampleSet, inner_set,
                nu_star: float, remaining: float, ms: MultiStartConfig = MultiStartConfig(),
                seed: int = 0) -> Optional[Selection]:
    """Node and input with the largest cost-normalized value; ``None`` means stop."""
    spec = post.spec
    results, vals, ok = [], [], []
    for k in range(spec.K):
        res = maximize_node_acq(post, k, history, samples, inner_set, nu_star, ms, seed)
        avail = res.input is not None and spec.cost(k, res.input.z()) <= remaining + 1e-12
        results.append(res)
        ok.append(avail)
        vals.append(res.value if avail else SENTINEL)
    if not any(ok):
        return None
    best = max((k for k in range(spec.K) if ok[k]), key=lambda k: (vals[k], -k))
    return Selection(best, results[best].input, vals[best], tuple(vals))


def one_shot_maximize(post: NetworkPosterior, k: int, parent_outputs, samples: BaseSampleSet,
                      nu_star: float, ms: MultiStartConfig = MultiStartConfig(), seed: int = 0,
                      x_star=None):
    """Joint ascent over node inputs and one inner maximizer per fantasy.

    Half of the screening pool puts every fantasy maximizer at ``x_star``
    (when given), the usual warm start for this formulation.
    Returns ``(z, value)``.
    """
    spec = post.spec
    ii = list(spec.input_indices[k])
    nI, I = len(ii), samples.I
    lo = np.concatenate([spec.lower[ii], np.tile(spec.lower, I)])
    hi = np.concatenate([spec.upper[ii], np.tile(spec.upper, I)])
    raw, starts = ms.counts(nI)
    rng = np.random.default_rng(_seed(seed, k, 3))
    extra = None
    if x_star is not None:
        m = raw // 2
        head = spec.lower[ii] + (spec.upper[ii] - spec.lower[ii]) * rng.random((m, nI))
        extra = np.hstack([head, np.tile(np.asarray(x_star, float), (m, I))])
        raw -= m
    po = np.asarray(parent_outputs, dtype=float).reshape(-1)
    v, val = maximize(lambda V: one_shot_values(post, k, V, po, samples, nu_star), lo, hi, rng,
                      raw, starts, ms.fd_step, ms.max_ascent_iters, **ms.stall_kwargs(), extra_points=extra)
    return np.concatenate([po, v[:nI]]), val
