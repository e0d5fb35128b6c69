"""Test problems: node truth functions, network wiring, costs and budgets."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .gp import HyperPrior, GammaPrior
from .network import NetworkSpec

ACKLEY_PRIOR = HyperPrior(GammaPrior(3.0, 6.0), GammaPrior(2.0, 0.15))
MANU_PRIOR = HyperPrior(GammaPrior(5.0, 2.0), GammaPrior(2.0, 0.15))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A function network with known node functions.

    ``nodes[k]`` maps node inputs of shape (..., dim_k) to outputs of shape
    (...). ``noise_std`` is per node; observations get independent Gaussian
    noise from :meth:`oracle`.
    """

    name: str
    spec: NetworkSpec
    nodes: tuple
    budget: float
    noise_std: tuple = ()
    prior: HyperPrior = ACKLEY_PRIOR
    initial_points: Optional[int] = None

    def __post_init__(self):
        if not self.noise_std:
            object.__setattr__(self, "noise_std", (0.0,) * self.spec.K)
        if len(self.nodes) != self.spec.K or len(self.noise_std) != self.spec.K:
            raise ValueError("need one node function and noise level per node")

    @property
    def default_costs(self) -> tuple:
        return tuple(self.spec.costs)

    @property
    def n_initial(self) -> int:
        return self.initial_points if self.initial_points is not None else 2 * self.spec.d + 1

    @property
    def noisy(self) -> bool:
        return any(s > 0 for s in self.noise_std)

    def truth(self, k: int, z) -> float:
        return float(self.nodes[k](np.asarray(z, dtype=float)))

    def oracle(self, rng: Optional[np.random.Generator] = None) -> Callable:
        """Observation function ``(k, z) -> y``; adds noise when the problem is noisy."""
        if not self.noisy:
            return self.truth
        if rng is None:
            raise ValueError("a noisy problem needs a random generator")

        def observe(k, z):
            return self.truth(k, z) + self.noise_std[k] * float(rng.standard_normal())

        return observe

    def objective(self, x) -> float:
        """Noise-free objective at design ``x`` (the ground-truth metric)."""
        x = np.asarray(x, dtype=float)
        ys = []
        for k in range(self.spec.K):
            ys.append(self.truth(k, self.spec.node_input(k, [ys[j] for j in self.spec.parents[k]], x)))
        return float(self.spec.objective(np.asarray(ys)))

    def with_costs(self, costs) -> "ProblemInstance":
        return replace(self, spec=self.spec.with_costs(costs))


def with_noise(p: ProblemInstance, std) -> ProblemInstance:
    """Same problem with independent N(0, std^2) noise on every node observation."""
    std = np.broadcast_to(np.asarray(std, float), (p.spec.K,))
    if np.any(std < 0):
        raise ValueError("noise std must be non-negative")
    return replace(p, name=p.name if not np.any(std > 0) else f"{p.name}-noisy",
                   noise_std=tuple(float(s) for s in std))


def ackley(x, negate: bool = False):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x**2, axis=-1) / d))
    b = -np.exp(np.sum(np.cos(2 * np.pi * x), axis=-1) / d)
    v = a + b + 20.0 + np.e
    return -v if negate else v


def _sigmoid_sum(x, bias, weights, coefs, offset):
    x = np.asarray(x, dtype=float)
    act = np.asarray(bias) + x @ np.asarray(weights).T
    return offset + (1.0 / (1.0 + np.exp(-act))) @ np.asarray(coefs)


class RFFSample:
    """A Matern-5/2 GP prior sample path via random Fourier features.

    The spectral density of the Matern-nu kernel is a multivariate t with
    2*nu degrees of freedom, so frequencies are ``g / l / sqrt(u / 5)`` with
    ``g`` standard normal and ``u`` chi-square(5).
    """

    def __init__(self, lengthscales, outputscale: float, seed: int, n_features: int = 2048):
        rng = np.random.default_rng(seed)
        ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        dim = ls.shape[0]
        g = rng.standard_normal((n_features, dim))
        u = rng.chisquare(5.0, size=(n_features, 1))
        self.omega = g / ls / np.sqrt(u / 5.0)
        self.phase = rng.uniform(0.0, 2 * np.pi, n_features)
        self.weights = rng.standard_normal(n_features) * np.sqrt(2.0 * outputscale / n_features)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.cos(z @ self.omega.T + self.phase) @ self.weights


def toy_1d() -> ProblemInstance:
    spec = NetworkSpec(parents=((), (0,)), input_indices=((0,), ()), bounds=[[-4.0, 4.0]],
                       costs=(1.0, 49.0), names=("f1", "f2"))
    f1 = lambda z: np.sin(z[..., 0]) + 2 * np.sin(2 * z[..., 0])  # noqa: E731
    f2 = lambda z: np.sin(3 * (z[..., 0] - 1) / 4)  # noqa: E731
    return ProblemInstance("toy", spec, (f1, f2), 150.0, initial_points=3)


def ackley6d() -> ProblemInstance:
    spec = NetworkSpec(parents=((), (0,)), input_indices=(tuple(range(6)), ()),
                       bounds=[[-2.0, 2.0]] * 6, costs=(1.0, 49.0), names=("ackley", "f2"))
    f1 = lambda z: ackley(z, negate=True)  # noqa: E731
    f2 = lambda z: -z[..., 0] * np.sin(5 * z[..., 0] / (6 * np.pi))  # noqa: E731
    return ProblemInstance("ackley", spec, (f1, f2), 700.0)


def manu_gp(seed: int = 0) -> ProblemInstance:
    spec = NetworkSpec(parents=((), (0,), (), (1, 2)),
                       input_indices=((0, 1), (), (2, 3), ()),
                       bounds=[[-1.0, 1.0]] * 4, costs=(5.0, 10.0, 10.0, 45.0),
                       names=("f1", "f2", "f3", "f4"))
    ss = np.random.SeedSequence(seed).spawn(4)
    s = [int(q.generate_state(1)[0]) for q in ss]
    nodes = (
        RFFSample([0.631, 0.631], 0.631, s[0]),
        RFFSample([1.0], 0.631, s[1]),
        RFFSample([1.0, 1.0], 0.631, s[2]),
        RFFSample([3.0, 3.0], 10.0, s[3]),
    )
    return ProblemInstance(f"manu_gp-{seed}", spec, nodes, 700.0, prior=MANU_PRIOR)


PHARM_F1 = dict(
    offset=-3.95,
    coefs=[9.20, 9.88, 10.84, 15.18],
    bias=[0.32, -4.83, 7.90, 9.41],
    weights=[[5.06, -4.07, -0.36, -0.34],
             [7.43, 3.46, 9.19, 16.58],
             [7.91, 4.48, 4.08, 8.28],
             [-7.99, 0.65, 3.14, 0.31]],
)
PHARM_F2 = dict(
    offset=1.07,
    coefs=[0.62, 0.65, -0.72, -0.45, -0.32],
    bias=[3.05, 1.78, 0.01, 1.82, 2.69],
    weights=[[0.03, -0.16, 4.03, -0.54],
             [0.60, -3.19, 0.10, 0.54],
             [2.04, -3.73, 0.10, -1.05],
             [4.78, 0.48, -4.68, -1.65],
             [5.99, 3.87, 3.10, -2.17]],
)


def pharm_score(y):
    y = np.asarray(y, dtype=float)
    return (60.0 - y[..., 0]) / 60.0 * y[..., 1] / 1.5


def pharm() -> ProblemInstance:
    spec = NetworkSpec(parents=((), ()), input_indices=((0, 1, 2, 3), (0, 1, 2, 3)),
                       bounds=[[-1.0, 1.0]] * 4, costs=(1.0, 49.0), outcome=pharm_score,
                       allow_shared_inputs=True, names=("disintegration", "strength"))
    f1 = lambda z: _sigmoid_sum(z, **PHARM_F1)  # noqa: E731
    f2 = lambda z: _sigmoid_sum(z, **PHARM_F2)  # noqa: E731
    return ProblemInstance("pharm", spec, (f1, f2), 700.0)


def matyas_neg(z):
    y, x7 = z[..., 0], z[..., 1]
    return -0.26 * (y**2 + x7**2) + 0.48 * y * x7


def ackmat() -> ProblemInstance:
    spec = NetworkSpec(parents=((), (0,)), input_indices=(tuple(range(6)), (6,)),
                       bounds=[[-2.0, 2.0]] * 6 + [[-10.0, 10.0]], costs=(1.0, 49.0),
                       parent_ranges=(None, [[0.0, 20.0]]), names=("ackley", "matyas"))
    return ProblemInstance("ackmat", spec, (ackley, matyas_neg), 700.0)


def gps_1(seed: int = 0) -> ProblemInstance:
    spec = NetworkSpec(parents=((), (0,)), input_indices=((0,), ()), bounds=[[-1.0, 1.0]],
                       costs=(1.0, 49.0))
    s = np.random.SeedSequence(seed).generate_state(2)
    nodes = (RFFSample([0.5], 1.0, int(s[0])), RFFSample([0.25], 1.0, int(s[1])))
    return ProblemInstance(f"gps1-{seed}", spec, nodes, 700.0)


def gps_2(seed: int = 0, lengthscale: float = 0.25) -> ProblemInstance:
    spec = NetworkSpec(parents=((), (), (), (0, 1, 2)), input_indices=((0,), (1,), (2,), ()),
                       bounds=[[-1.0, 1.0]] * 3, costs=(1.0, 1.0, 1.0, 47.0))
    s = np.random.SeedSequence(seed).generate_state(4)
    nodes = tuple(RFFSample([lengthscale] * (3 if k == 3 else 1), 1.0, int(s[k])) for k in range(4))
    return ProblemInstance(f"gps2-{seed}", spec, nodes, 700.0)


PROBLEMS = {
    "toy": toy_1d,
    "ackley": ackley6d,
    "manu_gp": manu_gp,
    "pharm": pharm,
    "ackmat": ackmat,
    "gps1": gps_1,
    "gps2": gps_2,
}

SEEDED = {"manu_gp", "gps1", "gps2"}


def get_problem(name: str, seed: int = 0, noise_std: float = 0.0, costs=None) -> ProblemInstance:
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}")
    p = PROBLEMS[name](seed) if name in SEEDED else PROBLEMS[name]()
    if costs is not None:
        p = p.with_costs(costs)
    if noise_std:
        p = with_noise(p, noise_std)
    return p
