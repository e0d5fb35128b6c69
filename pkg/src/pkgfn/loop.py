"""The outer optimization loop for p-KGFN and the full-evaluation baselines."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acqopt import build_inner_set, recommend, select_next
from .acquisition import (
    DiscretizationConfig,
    ei_values,
    eifn_values,
    kg_values,
    kgfn_full_values,
    tsfn_suggest,
)
from .gp import DEFAULT_JITTER, NodeDataset, fit_node_gp
from .multistart import MultiStartConfig, maximize
from .network import (
    NetworkHistory,
    NetworkSpec,
    full_evaluate,
    partial_evaluate,
)
from .problems import ProblemInstance
from .sampling import NetworkPosterior, estimate_nu_batch, fit_network, make_base_samples

ALGORITHMS = ("pkgfn", "eifn", "kgfn", "tsfn", "ei", "kg", "random")
FULL_EVAL = ALGORITHMS[1:]
CSV_COLUMNS = ("iter", "node", "cost", "spent", "metric", "nu_star", "wall_ms")


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class LoopConfig:
    I: int = 8
    J: int = 64
    J_eifn: int = 128
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    multistart: MultiStartConfig = field(default_factory=MultiStartConfig)
    fit_restarts: int = 5
    qmc: bool = True
    count_initial: bool = False
    model_mode: str = "networked"
    jitter: float = DEFAULT_JITTER
    max_iterations: Optional[int] = None

    def __post_init__(self):
        if self.model_mode not in ("networked", "blackbox"):
            raise ValueError(f"model_mode must be 'networked' or 'blackbox', got {self.model_mode!r}")


@dataclass
class BudgetState:
    B: float
    b: float = 0.0
    per_node_counts: list = field(default_factory=list)
    iteration: int = 0

    def affordable(self, cost: float) -> bool:
        return self.b + cost <= self.B + 1e-9

    def debit(self, cost: float) -> None:
        if not self.affordable(cost):
            raise ValueError(f"cost {cost} exceeds the remaining budget {self.B - self.b}")
        self.b += cost


@dataclass
class RunRow:
    iter: int
    node: str
    cost: float
    spent: float
    metric: float
    nu_star: float
    wall_ms: float
    x_star: np.ndarray
    z: Optional[np.ndarray] = None


@dataclass
class RunRecord:
    algo: str
    problem: str
    seed: int
    budget: float
    rows: list = field(default_factory=list)
    node_counts: list = field(default_factory=list)
    full_evals: int = 0
    aborted: Optional[str] = None

    @property
    def recommendation(self) -> np.ndarray:
        return self.rows[-1].x_star

    @property
    def final_metric(self) -> float:
        return self.rows[-1].metric

    @property
    def spent(self) -> float:
        return self.rows[-1].spent

    def csv_rows(self):
        for r in self.rows:
            yield [r.iter, r.node, repr(float(r.cost)), repr(float(r.spent)), repr(float(r.metric)),
                   repr(float(r.nu_star)), f"{r.wall_ms:.3f}"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows(self.csv_rows())


def initial_design(spec: NetworkSpec, truth, count: int, seed: int) -> NetworkHistory:
    """``count`` uniform designs, each evaluated on the full network."""
    if count < 1:
        raise ValueError("initial design needs at least one point")
    rng = np.random.default_rng(derive_seed(seed, 11))
    X = spec.lower + (spec.upper - spec.lower) * rng.random((count, spec.d))
    hist = NetworkHistory(spec)
    for x in X:
        full_evaluate(spec, truth, x, hist)
    return hist


def blackbox_spec(spec: NetworkSpec) -> NetworkSpec:
    return NetworkSpec(parents=((),), input_indices=(tuple(range(spec.d)),), bounds=spec.bounds,
                       costs=(spec.total_cost(),))


def metric_eval(problem: ProblemInstance, x) -> float:
    """Noise-free objective at the recommendation."""
    return problem.objective(x)


class _Runner:
    def __init__(self, problem: ProblemInstance, algo: str, budget: float, seed: int, cfg: LoopConfig):
        if algo not in ALGORITHMS:
            raise KeyError(f"unknown algorithm {algo!r}; known: {ALGORITHMS}")
        if not budget > 0:
            raise ValueError("budget must be positive")
        self.p, self.algo, self.seed, self.cfg = problem, algo, seed, cfg
        self.spec = problem.spec
        self.noise_var = [s**2 for s in problem.noise_std]
        self.state = BudgetState(float(budget), 0.0, [0] * self.spec.K)
        init_oracle = problem.oracle(np.random.default_rng(derive_seed(seed, 12)))
        self.oracle = problem.oracle(np.random.default_rng(derive_seed(seed, 13, ALGORITHMS.index(algo))))
        self.history = initial_design(self.spec, init_oracle, problem.n_initial, seed)
        self.full_x, self.full_y = [], []
        for m in range(self.history.count(0)):
            self.full_x.append(self._design_of(m))
            ys = [self.history.outputs[k][m] for k in range(self.spec.K)]
            self.full_y.append(float(self.spec.objective(np.asarray(ys))))
        if cfg.count_initial:
            self.state.debit(problem.n_initial * self.spec.total_cost())
        self.record = RunRecord(algo, problem.name, seed, float(budget))
        self.x_prev = None

    def _design_of(self, m: int) -> np.ndarray:
        # the controllable part of every node input of the m-th full evaluation
        x = np.empty(self.spec.d)
        for k in range(self.spec.K):
            nP = len(self.spec.parents[k])
            x[list(self.spec.input_indices[k])] = self.history.inputs[k][m][nP:]
        return x

    @property
    def networked(self) -> bool:
        return self.algo in ("pkgfn", "eifn", "kgfn", "tsfn") or self.cfg.model_mode == "networked"

    def fit(self, n: int):
        cfg = self.cfg
        ms = cfg.multistart
        self.post = self.bb = None
        if self.networked:
            self.post = fit_network(self.history, self.p.prior, cfg.fit_restarts, derive_seed(self.seed, n, 1),
                                    self.noise_var, cfg.jitter)
        if self.algo in ("ei", "kg") or not self.networked:
            self.bb = self._fit_blackbox(n)
        self.samples = make_base_samples(cfg.I, cfg.J, self.spec.K, derive_seed(self.seed, n, 2), cfg.qmc)
        extra = None if self.x_prev is None else self.x_prev[None]
        if self.networked:
            x, v = recommend(self.post, self.samples, ms, derive_seed(self.seed, n, 3), extra)
        else:
            gp = self.bb.nodes[0]
            raw, starts = ms.counts(self.spec.d)
            x, v = maximize(lambda X: gp.posterior(X)[0], self.spec.lower, self.spec.upper,
                            np.random.default_rng(derive_seed(self.seed, n, 3)), raw, starts,
                            ms.fd_step, ms.max_ascent_iters, **ms.stall_kwargs(), extra_points=extra)
        self.x_star, self.nu_hat = x, v
        self.x_prev = x

    def _fit_blackbox(self, n: int) -> NetworkPosterior:
        spec = blackbox_spec(self.spec)
        ds = NodeDataset(np.vstack(self.full_x), np.asarray(self.full_y))
        noise = 0.0
        if self.p.noisy:
            # the objective of a noisy network is observed with roughly the sink's noise
            noise = self.noise_var[-1]
        lo, width = self.spec.lower, self.spec.upper - self.spec.lower
        gp = fit_node_gp(ds, self.p.prior, self.cfg.fit_restarts, derive_seed(self.seed, n, 4), noise,
                         lo, np.where(width > 0, width, 1.0), self.cfg.jitter)
        return NetworkPosterior(spec, [gp])

    def log(self, n, node, cost, wall_ms, z=None):
        self.record.rows.append(RunRow(n, node, cost, self.state.b, metric_eval(self.p, self.x_star),
                                       self.nu_hat, wall_ms, self.x_star.copy(), z))

    def _inner_set(self, post, n):
        cfg = self.cfg
        A = build_inner_set(post, self.x_star, cfg.discretization, derive_seed(self.seed, n, 5),
                            cfg.multistart)
        nu = float(np.max(estimate_nu_batch(post, A, self.samples)))
        return A, nu

    def choose_full(self, n: int):
        cfg, spec, ms = self.cfg, self.spec, self.cfg.multistart
        lo, hi = spec.lower, spec.upper
        rng = np.random.default_rng(derive_seed(self.seed, n, 6))
        raw, starts = ms.counts(spec.d)
        algo = self.algo
        if algo == "random":
            return lo + (hi - lo) * rng.random(spec.d)
        if algo == "tsfn":
            return tsfn_suggest(self.post, derive_seed(self.seed, n, 7), ms)
        if algo == "eifn":
            s = make_base_samples(1, cfg.J_eifn, spec.K, derive_seed(self.seed, n, 8), cfg.qmc)
            y_best = max(self.full_y)
            f = lambda X: eifn_values(self.post, X, s, y_best)  # noqa: E731
        elif algo == "kgfn":
            A, nu = self._inner_set(self.post, n)
            f = lambda X: kgfn_full_values(self.post, X, self.samples, A, nu)  # noqa: E731
        elif algo == "ei":
            gp, y_best = self.bb.nodes[0], max(self.full_y)
            f = lambda X: ei_values(gp, X, y_best)  # noqa: E731
        else:
            bb = self.bb
            s = make_base_samples(cfg.I, cfg.J, 1, derive_seed(self.seed, n, 9), cfg.qmc)
            gp = bb.nodes[0]
            x_bb, _ = maximize(lambda X: gp.posterior(X)[0], lo, hi, rng, raw, starts, ms.fd_step,
                               ms.max_ascent_iters, **ms.stall_kwargs(), extra_points=np.vstack(self.full_x))
            A = build_inner_set(bb, x_bb, cfg.discretization, derive_seed(self.seed, n, 5), ms)
            nu = float(np.max(estimate_nu_batch(bb, A, s)))
            f = lambda X: kg_values(bb, X, s, A, nu, spec.total_cost())  # noqa: E731
        x, _ = maximize(f, lo, hi, rng, raw, starts, ms.fd_step, ms.max_ascent_iters, **ms.stall_kwargs())
        return x

    def step(self, n: int) -> bool:
        spec = self.spec
        t0 = time.perf_counter()
        if self.algo == "pkgfn":
            A, nu = self._inner_set(self.post, n)
            nu = max(nu, self.nu_hat)
            sel = select_next(self.post, self.history, self.samples, A, nu, self.state.B - self.state.b,
                              self.cfg.multistart, derive_seed(self.seed, n, 10))
            wall = 1e3 * (time.perf_counter() - t0)
            if sel is None:
                return False
            k, c = sel.node, sel.candidate
            cost = spec.cost(k, c.z())
            partial_evaluate(spec, self.oracle, self.history, c)
            self.state.debit(cost)
            self.state.per_node_counts[k] += 1
            self.fit(n)
            self.log(n, str(k + 1), cost, wall, c.z())
            return True
        total = spec.total_cost()
        if not self.state.affordable(total):
            return False
        x = self.choose_full(n)
        wall = 1e3 * (time.perf_counter() - t0)
        ys = full_evaluate(spec, self.oracle, x, self.history)
        self.state.debit(total)
        self.record.full_evals += 1
        for k in range(spec.K):
            self.state.per_node_counts[k] += 1
        self.full_x.append(np.asarray(x, float))
        self.full_y.append(float(spec.objective(np.asarray(ys))))
        self.fit(n)
        self.log(n, "full", total, wall, x)
        return True

    def run(self) -> RunRecord:
        self.fit(0)
        self.log(0, "init", self.state.b, 0.0)
        n = 0
        while self.state.b < self.state.B:
            if self.cfg.max_iterations is not None and n >= self.cfg.max_iterations:
                break
            n += 1
            self.state.iteration = n
            try:
                if not self.step(n):
                    break
            except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
                self.record.aborted = f"iteration {n}: {exc!r}"
                break
        self.record.node_counts = list(self.state.per_node_counts)
        return self.record


def run(problem: ProblemInstance, algo: str, budget: Optional[float] = None, seed: int = 0,
        cfg: Optional[LoopConfig] = None) -> RunRecord:
    """Run one algorithm on one problem until the budget or the candidates run out."""
    cfg = cfg or LoopConfig()
    return _Runner(problem, algo, problem.budget if budget is None else budget, seed, cfg).run()
