"""Exact Gaussian process regression for a single network node.

Each node of a function network is modelled by an independent zero-mean GP
with a Matérn 5/2 ARD kernel. Outputs are standardized before fitting and
inputs are affinely rescaled (typically onto the unit cube), so the kernel
hyperparameters always live in normalized coordinates.

Hyperparameters are fitted by MAP estimation (log marginal likelihood plus
Gamma log-priors, optimized in log space). Fantasy conditioning is a rank-1
extension of the cached Cholesky factor.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

SQRT5 = math.sqrt(5.0)
DEFAULT_JITTER = 1e-6


class DegenerateFitWarning(UserWarning):
    """MAP fitting was skipped and prior-mode hyperparameters were used."""


@dataclass(frozen=True)
class KernelHyperparams:
    """Matérn 5/2 ARD hyperparameters.

    ``outputscale`` and ``noise_variance`` are expressed in standardized
    output units; ``lengthscales`` in normalized input units.
    """

    lengthscales: np.ndarray
    outputscale: float = 1.0
    noise_variance: float = 0.0
    mean_constant: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if ls.ndim != 1 or np.any(~(ls > 0)):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.outputscale > 0:
            raise ValueError(f"outputscale must be positive, got {self.outputscale}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) density."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def mode(self) -> float:
        if self.shape >= 1:
            return (self.shape - 1.0) / self.rate
        return self.shape / self.rate

    def logpdf(self, v):
        a, b = self.shape, self.rate
        return a * math.log(b) - math.lgamma(a) + (a - 1.0) * np.log(v) - b * v

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)


@dataclass(frozen=True)
class HyperPrior:
    lengthscale_prior: GammaPrior = field(default_factory=lambda: GammaPrior(3.0, 6.0))
    outputscale_prior: GammaPrior = field(default_factory=lambda: GammaPrior(2.0, 0.15))


@dataclass(frozen=True)
class NodeDataset:
    """Observations ``(z_j, y_j)`` of one node."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(y), -1) if len(y) else x.reshape(0, max(x.size, 0))
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} outputs")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @property
    def count(self) -> int:
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "NodeDataset":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def append(self, z, y) -> "NodeDataset":
        z = np.asarray(z, dtype=float).reshape(1, self.dim)
        return NodeDataset(np.vstack([self.inputs, z]), np.append(self.outputs, float(y)))


def matern52(r):
    """Unit-scale Matérn 5/2 correlation as a function of scaled distance."""
    sr = SQRT5 * np.asarray(r, dtype=float)
    out = sr * sr
    out *= 1.0 / 3.0
    out += sr
    out += 1.0
    out *= np.exp(-sr)
    return out


def _scaled_sqdist(a, b, lengthscales):
    a = a / lengthscales
    b = b / lengthscales
    if a.shape[1] <= 2:
        # explicit differences are faster in low dimension and avoid cancellation
        out = np.zeros((a.shape[0], b.shape[0]))
        for i in range(a.shape[1]):
            diff = np.subtract.outer(a[:, i], b[:, i])
            diff *= diff
            out += diff
        return out
    d2 = (a * a).sum(-1)[:, None] + (b * b).sum(-1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def kernel_matrix(h: KernelHyperparams, a, b) -> np.ndarray:
    """Gram matrix between row sets ``a`` (n, d) and ``b`` (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != h.dim or b.shape[1] != h.dim:
        raise ValueError(f"expected inputs of dimension {h.dim}")
    return h.outputscale * matern52(np.sqrt(_scaled_sqdist(a, b, h.lengthscales)))


def kernel_pairwise(h: KernelHyperparams, a, b) -> np.ndarray:
    """Kernel between broadcastable point arrays ``a`` and ``b`` (..., d)."""
    diff = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / h.lengthscales
    return h.outputscale * matern52(np.sqrt((diff * diff).sum(-1)))


def kernel_eval(h: KernelHyperparams, a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != (h.dim,) or b.shape != (h.dim,):
        raise ValueError(
            f"points must have dimension {h.dim}, got {a.shape[0]} and {b.shape[0]}"
        )
    return float(kernel_pairwise(h, a, b))


@dataclass(frozen=True, eq=False)
class NodeGP:
    """GP posterior for one node, immutable after construction.

    ``y_offset``/``y_scale`` map standardized outputs back to the original
    scale; ``x_offset``/``x_scale`` normalize raw inputs before the kernel.
    The factor cached in ``chol`` is that of ``K + (noise_variance + jitter) I``.
    """

    hyperparams: KernelHyperparams
    dataset: NodeDataset
    y_offset: float = 0.0
    y_scale: float = 1.0
    x_offset: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None
    jitter: float = DEFAULT_JITTER
    degenerate: bool = False
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)
    chol_inv: np.ndarray = field(init=False, repr=False)
    xn: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.hyperparams.dim
        if self.dataset.count and self.dataset.dim != d:
            raise ValueError(f"dataset dimension {self.dataset.dim} != kernel dimension {d}")
        xo = np.zeros(d) if self.x_offset is None else np.asarray(self.x_offset, float).reshape(d)
        xs = np.ones(d) if self.x_scale is None else np.asarray(self.x_scale, float).reshape(d)
        object.__setattr__(self, "x_offset", xo)
        object.__setattr__(self, "x_scale", xs)
        if not self.y_scale > 0:
            raise ValueError("y_scale must be positive")
        xn = self.normalize(self.dataset.inputs.reshape(-1, d))
        object.__setattr__(self, "xn", xn)
        n = xn.shape[0]
        if n == 0:
            object.__setattr__(self, "chol", np.zeros((0, 0)))
            object.__setattr__(self, "alpha", np.zeros(0))
            object.__setattr__(self, "chol_inv", np.zeros((0, 0)))
            return
        K = kernel_matrix(self.hyperparams, xn, xn)
        K[np.diag_indices_from(K)] += self.diag_noise
        L = linalg.cholesky(K, lower=True)
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "alpha", linalg.cho_solve((L, True), self.standardized_targets))
        object.__setattr__(self, "chol_inv", linalg.solve_triangular(L, np.eye(n), lower=True))

    @property
    def dim(self) -> int:
        return self.hyperparams.dim

    @property
    def diag_noise(self) -> float:
        return self.hyperparams.noise_variance + self.jitter

    @property
    def standardized_targets(self) -> np.ndarray:
        return (self.dataset.outputs - self.y_offset) / self.y_scale

    @property
    def prior_variance(self) -> float:
        return self.hyperparams.outputscale * self.y_scale**2

    def normalize(self, z):
        return (np.asarray(z, dtype=float) - self.x_offset) / self.x_scale

    def posterior_std_units(self, zn):
        """Standardized mean, latent variance and ``L^-1 k(X, z)`` at normalized rows."""
        h = self.hyperparams
        m = zn.shape[0]
        if self.xn.shape[0] == 0:
            return np.zeros(m), np.full(m, h.outputscale), np.zeros((m, 0))
        Ks = kernel_matrix(h, zn, self.xn)
        mean = Ks @ self.alpha
        # L^-1 is cached: one matrix product beats a triangular solve with many right-hand sides
        V = Ks @ self.chol_inv.T
        var = h.outputscale - (V * V).sum(-1)
        return mean, np.maximum(var, 0.0), V

    def posterior(self, points):
        """Posterior mean and latent variance at ``points`` in original units."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.dim) if self.dim > 1 else pts.reshape(-1, 1)
        if pts.shape[-1] != self.dim:
            raise ValueError(f"points must have dimension {self.dim}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("posterior requested at non-finite points")
        lead = pts.shape[:-1]
        mean, var, _ = self.posterior_std_units(self.normalize(pts.reshape(-1, self.dim)))
        return (self.y_offset + self.y_scale * mean).reshape(lead), (self.y_scale**2 * var).reshape(lead)

    def predict(self, points):
        """Like :meth:`posterior` but for arbitrary leading shape, no validation."""
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        mean, var, _ = self.posterior_std_units(self.normalize(pts.reshape(-1, self.dim)))
        return (self.y_offset + self.y_scale * mean).reshape(lead), (self.y_scale**2 * var).reshape(lead)

    def with_dataset(self, dataset: NodeDataset) -> "NodeGP":
        """Same hyperparameters and transforms, different data (full rebuild)."""
        return NodeGP(
            self.hyperparams, dataset, self.y_offset, self.y_scale,
            self.x_offset, self.x_scale, self.jitter, self.degenerate,
        )


def posterior(gp: NodeGP, points):
    return gp.posterior(points)


def draw_node_sample(gp: NodeGP, z, w: float) -> float:
    if not np.isfinite(w):
        raise ValueError("w must be finite")
    mean, var = gp.posterior(np.asarray(z, dtype=float).reshape(1, gp.dim))
    return float(mean[0] + math.sqrt(var[0]) * w)


def fantasy_condition(gp: NodeGP, z, y: float) -> NodeGP:
    """Condition ``gp`` on one more observation via a rank-1 Cholesky update.

    Hyperparameters and transforms are held fixed. When the new point carries
    no information (zero Schur complement, e.g. a noise-free duplicate) the
    original model is returned unchanged.
    """
    if not np.isfinite(y):
        raise ValueError("fantasy observation must be finite")
    z = np.asarray(z, dtype=float).reshape(1, gp.dim)
    zn = gp.normalize(z)
    h = gp.hyperparams
    n = gp.xn.shape[0]
    kzz = h.outputscale + gp.diag_noise
    if n == 0:
        l = np.zeros(0)
    else:
        l = linalg.solve_triangular(gp.chol, kernel_matrix(h, gp.xn, zn)[:, 0], lower=True)
    schur = kzz - l @ l
    if schur <= 1e-14 * kzz:
        return gp
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = gp.chol
    L[n, :n] = l
    L[n, n] = math.sqrt(schur)
    new = object.__new__(NodeGP)
    fields = dict(
        hyperparams=h, dataset=gp.dataset.append(z, y), y_offset=gp.y_offset,
        y_scale=gp.y_scale, x_offset=gp.x_offset, x_scale=gp.x_scale,
        jitter=gp.jitter, degenerate=gp.degenerate,
    )
    for k, v in fields.items():
        object.__setattr__(new, k, v)
    object.__setattr__(new, "xn", np.vstack([gp.xn, zn]))
    object.__setattr__(new, "chol", L)
    object.__setattr__(new, "alpha", linalg.cho_solve((L, True), new.standardized_targets))
    object.__setattr__(new, "chol_inv", linalg.solve_triangular(L, np.eye(n + 1), lower=True))
    return new


# ---------------------------------------------------------------------------
# MAP fitting


def _neg_log_posterior(theta, xn, y, prior: HyperPrior, noise: float):
    """Negative (log marginal likelihood + log prior) and its gradient.

    ``theta`` = (log lengthscales..., log outputscale). Priors are placed on
    the raw (not log) hyperparameters, with no Jacobian term, so the prior
    mode in theta-space is the Gamma mode.
    """
    d = xn.shape[1]
    ls = np.exp(theta[:d])
    s = math.exp(theta[d])
    n = xn.shape[0]
    diff = (xn[:, None, :] - xn[None, :, :]) / ls
    sq = diff * diff
    r = np.sqrt(sq.sum(-1))
    e = np.exp(-SQRT5 * r)
    K = s * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    K[np.diag_indices(n)] += noise
    try:
        L = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    Kinv = linalg.cho_solve((L, True), np.eye(n))
    Wm = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 1)
    # dK/dlog(l_d) = s * 5/3 (1 + sqrt5 r) e^{-sqrt5 r} * (diff_d)^2
    base = s * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    for j in range(d):
        grad[j] = 0.5 * np.sum(Wm * (base * sq[:, :, j]))
    grad[d] = 0.5 * np.sum(Wm * (K - noise * np.eye(n)))
    lp_l, lp_s = prior.lengthscale_prior, prior.outputscale_prior
    logp = float(np.sum(lp_l.logpdf(ls)) + lp_s.logpdf(s))
    grad[:d] += (lp_l.shape - 1.0) - lp_l.rate * ls
    grad[d] += (lp_s.shape - 1.0) - lp_s.rate * s
    return -(lml + logp), -grad


LOG_BOUNDS_LS = (math.log(1e-3), math.log(1e2))
LOG_BOUNDS_OS = (math.log(1e-4), math.log(1e3))


def standardize(outputs):
    y = np.asarray(outputs, dtype=float)
    if y.size == 0:
        return 0.0, 1.0
    mu = float(y.mean())
    sd = float(y.std())
    return mu, (sd if sd > 1e-12 else 1.0)


def log_posterior(dataset: NodeDataset, prior: HyperPrior, h: KernelHyperparams,
                  x_offset=None, x_scale=None, jitter: float = DEFAULT_JITTER) -> float:
    """MAP objective at ``h`` (standardized outputs, normalized inputs)."""
    xo = 0.0 if x_offset is None else x_offset
    xs = 1.0 if x_scale is None else x_scale
    xn = (dataset.inputs - xo) / xs
    mu, sd = standardize(dataset.outputs)
    theta = np.append(np.log(h.lengthscales), math.log(h.outputscale))
    val, _ = _neg_log_posterior(theta, xn, (dataset.outputs - mu) / sd, prior,
                                h.noise_variance + jitter)
    return -val


def prior_mode_hyperparams(dim: int, prior: HyperPrior, noise_variance: float = 0.0):
    return KernelHyperparams(
        np.full(dim, prior.lengthscale_prior.mode), prior.outputscale_prior.mode, noise_variance
    )


def map_fit(dataset: NodeDataset, prior: HyperPrior, restarts: int = 5, seed: int = 0,
            noise_variance: float = 0.0, x_offset=None, x_scale=None,
            jitter: float = DEFAULT_JITTER, maxiter: int = 200) -> KernelHyperparams:
    """Multi-start MAP estimate of lengthscales and outputscale.

    ``noise_variance`` is given in standardized units and held fixed. The
    first start is the prior mode; the others are prior draws, so the start
    set for ``restarts=r`` is a prefix of the set for any larger ``r``.
    Datasets with fewer than two points or constant outputs yield the prior
    mode and a :class:`DegenerateFitWarning`.
    """
    if dataset.count < 1:
        raise ValueError("map_fit needs at least one observation")
    if restarts < 1:
        raise ValueError("restarts must be positive")
    d = dataset.dim
    mu, sd = standardize(dataset.outputs)
    if dataset.count < 2 or np.ptp(dataset.outputs) == 0.0:
        warnings.warn("degenerate dataset; using prior-mode hyperparameters", DegenerateFitWarning)
        return prior_mode_hyperparams(d, prior, noise_variance)
    xo = 0.0 if x_offset is None else np.asarray(x_offset, float)
    xs = 1.0 if x_scale is None else np.asarray(x_scale, float)
    xn = (dataset.inputs - xo) / xs
    y = (dataset.outputs - mu) / sd
    rng = np.random.default_rng(seed)
    lp, sp = prior.lengthscale_prior, prior.outputscale_prior
    starts = [np.append(np.full(d, math.log(lp.mode)), math.log(sp.mode))]
    for _ in range(restarts - 1):
        starts.append(np.append(np.log(lp.sample(rng, d)), math.log(sp.sample(rng))))
    bounds = [LOG_BOUNDS_LS] * d + [LOG_BOUNDS_OS]
    noise = noise_variance + jitter
    best = None
    for t0 in starts:
        t0 = np.clip(t0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(_neg_log_posterior, t0, args=(xn, y, prior, noise), jac=True,
                       method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    return KernelHyperparams(np.exp(theta[:d]), math.exp(theta[d]), noise_variance)


def fit_node_gp(dataset: NodeDataset, prior: HyperPrior, restarts: int = 5, seed: int = 0,
                noise_variance: float = 0.0, x_offset=None, x_scale=None,
                jitter: float = DEFAULT_JITTER) -> NodeGP:
    """Standardize, MAP-fit and build a :class:`NodeGP`.

    ``noise_variance`` is in original output units.
    """
    mu, sd = standardize(dataset.outputs)
    nv = noise_variance / sd**2
    degenerate = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateFitWarning)
        h = map_fit(dataset, prior, restarts, seed, nv, x_offset, x_scale, jitter)
        degenerate = any(issubclass(w.category, DegenerateFitWarning) for w in caught)
    return NodeGP(h, dataset, mu, sd, x_offset, x_scale, jitter, degenerate)
