"""Deterministic multi-start ascent for batched objectives.

Objectives take an array of points (B, D) and return (B,) values; they must
be deterministic (SAA), which makes finite-difference gradients usable. All
starts are ascended jointly: their objectives are summed, which keeps the
problem separable while letting one L-BFGS-B run drive every start.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize


@dataclass(frozen=True)
class MultiStartConfig:
    raw_samples_per_dim: int = 100
    starts_per_dim: int = 10
    fd_step: float = 1e-4
    max_ascent_iters: int = 50
    stall_window: int = 20
    stall_tol: float = 1e-3

    def __post_init__(self):
        if self.starts_per_dim > self.raw_samples_per_dim:
            raise ValueError("cannot start from more points than are screened")
        if self.stall_window < 1 or self.stall_tol < 0:
            raise ValueError("need stall_window >= 1 and stall_tol >= 0")

    def stall_kwargs(self) -> dict:
        return {"stall_window": self.stall_window, "stall_tol": self.stall_tol}

    def counts(self, dim: int):
        dim = max(int(dim), 1)
        return self.raw_samples_per_dim * dim, max(1, self.starts_per_dim * dim)


def fd_gradient(f, X, lower, upper, step):
    """Central differences of a batched objective, one-sided at the bounds."""
    S, D = X.shape
    h = step * (upper - lower)
    delta = (h[:, None] * np.eye(D))[:, None, :]
    Xp = np.minimum(X[None] + delta, upper)
    Xm = np.maximum(X[None] - delta, lower)
    vals = f(np.concatenate([X, Xp.reshape(-1, D), Xm.reshape(-1, D)]))
    f0 = vals[:S]
    fp = vals[S:S + D * S].reshape(D, S)
    fm = vals[S + D * S:].reshape(D, S)
    idx = np.arange(D)
    width = (Xp[idx, :, idx] - Xm[idx, :, idx])
    width = np.where(width > 0, width, 1.0)
    return f0, ((fp - fm) / width).T


def ascend(f, X0, lower, upper, fd_step=1e-4, maxiter=50, stall_window=None, stall_tol=1e-3):
    """Jointly ascend starts ``X0``; return final points and their values.

    With ``stall_window`` set, the ascent also stops once the best start has
    improved by less than ``stall_tol`` (relative) over that many iterations.
    """
    S, D = X0.shape
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    last = {}

    def neg(flat):
        f0, g = fd_gradient(f, flat.reshape(S, D), lower, upper, fd_step)
        last["best"] = float(f0.max())
        return -float(f0.sum()), -g.ravel()

    trace = []

    def stalled(intermediate_result):
        trace.append(last["best"])
        if stall_window is not None and len(trace) > stall_window:
            old = trace[-1 - stall_window]
            if trace[-1] - old <= stall_tol * max(abs(old), 1e-12):
                raise StopIteration

    bounds = list(zip(np.tile(lower, S), np.tile(upper, S)))
    res = minimize(neg, X0.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter}, callback=stalled)
    Xf = np.clip(res.x.reshape(S, D), lower, upper)
    return Xf, f(Xf)


def maximize(f, lower, upper, rng, raw_samples: int, num_starts: int, fd_step: float = 1e-4,
             maxiter: int = 50, extra_points=None, extra_starts=None, stall_window=None,
             stall_tol: float = 1e-3):
    """Screen uniform raw samples, ascend from the best, return ``(x, value)``.

    ``extra_points`` join the raw screening pool; ``extra_starts`` are always
    ascended. The returned value is never below the best screened value.
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    D = lower.shape[0]
    if D == 0:
        v = f(np.zeros((1, 0)))
        return np.zeros(0), float(v[0])
    raw = lower + (upper - lower) * rng.random((raw_samples, D))
    if extra_points is not None and len(extra_points):
        raw = np.vstack([np.asarray(extra_points, float).reshape(-1, D), raw])
    vals = f(raw)
    order = np.argsort(-vals, kind="stable")[:num_starts]
    X0, v0 = raw[order], vals[order]
    if extra_starts is not None and len(extra_starts):
        es = np.asarray(extra_starts, float).reshape(-1, D)
        X0 = np.vstack([X0, es])
        v0 = np.concatenate([v0, f(es)])
    if maxiter > 0:
        Xf, vf = ascend(f, X0, lower, upper, fd_step, maxiter, stall_window, stall_tol)
        keep = vf >= v0
        X0 = np.where(keep[:, None], Xf, X0)
        v0 = np.where(keep, vf, v0)
    i = int(np.argmax(v0))
    best_raw = int(np.argmax(vals))
    if vals[best_raw] > v0[i]:
        return raw[best_raw].copy(), float(vals[best_raw])
    return X0[i].copy(), float(v0[i])
