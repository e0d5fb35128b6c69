"""Experiment runner: replications, aggregation, node-count tables and curves."""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .acqopt import build_inner_set, maximize_node_acq, one_shot_maximize, recommend
from .acquisition import DiscretizationConfig, pkgfn_values
from .loop import ALGORITHMS, LoopConfig, derive_seed, initial_design, run
from .multistart import MultiStartConfig
from .network import NetworkHistory
from .problems import PROBLEMS, get_problem
from .sampling import estimate_nu_batch, fit_network, make_base_samples


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "toy"
    algorithms: list = field(default_factory=lambda: ["pkgfn", "eifn", "random"])
    budget: Optional[float] = None
    replications: int = 1
    seed: int = 0
    costs: Optional[list] = None
    I: int = 8
    J: int = 64
    N_T: int = 10
    N_L: int = 10
    r: float = 0.1
    model_mode: str = "networked"
    out_dir: str = "results"
    noise_std: float = 0.0
    problem_seed: int = 0
    count_initial: bool = False
    fit_restarts: int = 5
    raw_samples_per_dim: int = 100
    starts_per_dim: int = 10
    max_ascent_iters: int = 50
    max_iterations: Optional[int] = None
    workers: int = 1
    # optimizer comparison
    snapshot_sizes: list = field(default_factory=lambda: [5, 10, 15])
    fantasy_counts: list = field(default_factory=lambda: [2, 4, 8])
    inner_sizes: list = field(default_factory=lambda: [11, 21, 41])
    trials: int = 3

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem: unknown name {self.problem!r}; known: {sorted(PROBLEMS)}")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"algorithms: unknown name {a!r}; known: {list(ALGORITHMS)}")
        if self.replications < 1:
            raise ConfigError("replications: must be at least 1")
        if self.budget is not None and not self.budget > 0:
            raise ConfigError("budget: must be positive")
        if self.costs is not None and any(not c > 0 for c in self.costs):
            raise ConfigError("costs: all costs must be positive")
        for key in ("I", "J", "fit_restarts", "raw_samples_per_dim", "starts_per_dim", "trials"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be at least 1")
        for key in ("N_T", "N_L", "max_ascent_iters"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be non-negative")
        if not 0 < self.r <= 1:
            raise ConfigError("r: must lie in (0, 1]")
        if self.model_mode not in ("networked", "blackbox"):
            raise ConfigError(f"model_mode: unknown value {self.model_mode!r}")
        if self.noise_std < 0:
            raise ConfigError("noise_std: must be non-negative")
        for s in self.inner_sizes:
            if s < 1 or (s - 1) % 2:
                raise ConfigError("inner_sizes: each size must be 1 + an even number")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(doc) - known)
        if bad:
            raise ConfigError(f"unknown config key(s): {', '.join(bad)}")
        return cls(**doc)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            I=self.I, J=self.J,
            discretization=DiscretizationConfig(self.N_T, self.N_L, self.r),
            multistart=MultiStartConfig(self.raw_samples_per_dim, self.starts_per_dim, 1e-4, self.max_ascent_iters),
            fit_restarts=self.fit_restarts, count_initial=self.count_initial, model_mode=self.model_mode,
            max_iterations=self.max_iterations,
        )

    def make_problem(self):
        return get_problem(self.problem, self.problem_seed, self.noise_std, self.costs)

    def effective_budget(self) -> float:
        return float(self.budget) if self.budget is not None else self.make_problem().budget


@dataclass
class AggregateReport:
    grid: np.ndarray
    curves: dict  # algo -> (mean, se, n)
    node_counts: dict  # algo -> list of per-replication count lists
    full_evals: dict
    wall_ms: dict
    budget: float
    records: list = field(default_factory=list)


def _one_run(args):
    cfg, algo, rep = args
    return run(cfg.make_problem(), algo, cfg.effective_budget(), cfg.seed + rep, cfg.loop_config())


def locf(spent, metric, grid):
    """Last observation carried forward of a stepped series onto ``grid``."""
    spent = np.asarray(spent, float)
    idx = np.searchsorted(spent, grid, side="right") - 1
    out = np.asarray(metric, float)[np.clip(idx, 0, None)]
    return np.where(idx >= 0, out, np.nan)


def aggregate(records, budget: float) -> AggregateReport:
    grid = np.unique(np.concatenate([[r.spent for r in rec.rows] for rec in records]))
    algos = list(dict.fromkeys(rec.algo for rec in records))
    curves, counts, fulls, walls = {}, {}, {}, {}
    for a in algos:
        recs = [r for r in records if r.algo == a]
        M = np.vstack([locf([row.spent for row in r.rows], [row.metric for row in r.rows], grid) for r in recs])
        n = np.sum(~np.isnan(M), axis=0)
        mean = np.nanmean(np.where(n > 0, M, 0.0), axis=0) if M.size else M
        se = np.zeros_like(mean)
        many = n > 1
        if np.any(many):
            se[many] = np.nanstd(M[:, many], axis=0, ddof=1) / np.sqrt(n[many])
        curves[a] = (mean, se, n)
        counts[a] = [r.node_counts for r in recs]
        fulls[a] = [r.full_evals for r in recs]
        walls[a] = [float(np.mean([row.wall_ms for row in r.rows[1:]])) if len(r.rows) > 1 else 0.0 for r in recs]
    return AggregateReport(grid, curves, counts, fulls, walls, budget, list(records))


def write_outputs(report: AggregateReport, out_dir, problem_name: str, K: int) -> None:
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    reps = {}
    for rec in report.records:
        i = reps.get(rec.algo, 0)
        reps[rec.algo] = i + 1
        rec.to_csv(out / "runs" / f"{rec.algo}_{i}.csv")
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algo", "spent", "mean", "se", "n"])
        for a, (mean, se, n) in report.curves.items():
            for g, m, s, c in zip(report.grid, mean, se, n):
                if c:
                    w.writerow([a, repr(float(g)), repr(float(m)), repr(float(s)), int(c)])
    with open(out / "node_counts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algo", "replication"] + [f"node_{k + 1}" for k in range(K)] + ["full_evals"])
        for a, rows in report.node_counts.items():
            for i, (cnt, fe) in enumerate(zip(rows, report.full_evals[a])):
                w.writerow([a, i] + list(cnt) + [fe])
            w.writerow([a, "mean"] + [repr(float(v)) for v in np.mean(rows, axis=0)]
                       + [repr(float(np.mean(report.full_evals[a])))])
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algo", "replication", "mean_wall_ms"])
        for a, vals in report.wall_ms.items():
            for i, v in enumerate(vals):
                w.writerow([a, i, f"{v:.3f}"])
    plot_curves(report, out / "curves.svg", problem_name)


def plot_curves(report: AggregateReport, path, title: str = "") -> None:
    """Stepped mean metric with a +-2 SE band per algorithm, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "pkgfn"
    fig, ax = plt.subplots(figsize=(6, 4))
    for a, (mean, se, n) in report.curves.items():
        ok = n > 0
        g = report.grid[ok]
        ax.step(g, mean[ok], where="post", label=a)
        ax.fill_between(g, mean[ok] - 2 * se[ok], mean[ok] + 2 * se[ok], step="post", alpha=0.2)
    ax.set_xlim(0, report.budget)
    ax.set_xlabel("budget spent")
    ax.set_ylabel("objective at recommendation")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_experiment(cfg: ExperimentConfig, out_dir=None, single_thread: bool = True) -> AggregateReport:
    jobs = [(cfg, a, rep) for rep in range(cfg.replications) for a in cfg.algorithms]
    if single_thread or cfg.workers <= 1:
        records = [_one_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(cfg.workers) as ex:
            records = list(ex.map(_one_run, jobs))
    records.sort(key=lambda r: (cfg.algorithms.index(r.algo), r.seed))
    report = aggregate(records, cfg.effective_budget())
    p = cfg.make_problem()
    write_outputs(report, out_dir or cfg.out_dir, p.name, p.spec.K)
    return report


def ackley_snapshot(n_points: int, seed: int) -> NetworkHistory:
    p = get_problem("ackley")
    hist = initial_design(p.spec, p.truth, n_points, seed)
    return hist


def compare_optimizers(cfg: ExperimentConfig, out_dir=None, hifi_I: int = 512, hifi_J: int = 128):
    """Score one-shot vs discretization maximization of node-1 p-KGFN on Ackley snapshots.

    Both routes' chosen inputs are rescored by a common high-fidelity
    estimator so the values are comparable.
    """
    p = get_problem("ackley")
    ms = cfg.loop_config().multistart
    rows = []
    for n_pts in cfg.snapshot_sizes:
        for trial in range(cfg.trials):
            seed = derive_seed(cfg.seed, n_pts, trial)
            hist = ackley_snapshot(n_pts, seed)
            post = fit_network(hist, p.prior, cfg.fit_restarts, seed)
            hifi = make_base_samples(hifi_I, hifi_J, p.spec.K, derive_seed(seed, 99))
            for I in cfg.fantasy_counts:
                samples = make_base_samples(I, cfg.J, p.spec.K, derive_seed(seed, I))
                x_star, nu_hat = recommend(post, samples, ms, derive_seed(seed, 3))
                big = build_inner_set(post, x_star, DiscretizationConfig(20, 20, cfg.r), derive_seed(seed, 7), ms)
                nu_hifi = float(np.max(estimate_nu_batch(post, big, hifi)))
                t0 = time.perf_counter()
                z1, v1 = one_shot_maximize(post, 0, (), samples, nu_hat, ms, derive_seed(seed, 5), x_star)
                t_os = time.perf_counter() - t0
                h1 = float(pkgfn_values(post, 0, z1[None], hifi, big, nu_hifi)[0])
                rows.append([n_pts, I, "", trial, "one-shot", v1, h1, t_os])
                for size in cfg.inner_sizes:
                    half = (size - 1) // 2
                    t0 = time.perf_counter()
                    A = build_inner_set(post, x_star, DiscretizationConfig(half, half, cfg.r),
                                        derive_seed(seed, 6), ms)
                    nu = max(nu_hat, float(np.max(estimate_nu_batch(post, A, samples))))
                    res = maximize_node_acq(post, 0, hist, samples, A, nu, ms, derive_seed(seed, 5))
                    t_d = time.perf_counter() - t0
                    h2 = float(pkgfn_values(post, 0, res.input.z()[None], hifi, big, nu_hifi)[0])
                    rows.append([n_pts, I, A.shape[0], trial, "discretization", res.value, h2, t_d])
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "optimizer_comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_points", "I", "inner_size", "trial", "route", "value", "hifi_value", "seconds"])
        for r in rows:
            w.writerow(r[:5] + [repr(float(r[5])), repr(float(r[6])), f"{r[7]:.4f}"])
    return rows


def list_problems() -> list:
    out = []
    for name in PROBLEMS:
        p = get_problem(name)
        out.append((name, p.spec.K, p.spec.d, p.default_costs, p.budget))
    return out


def _force_single_thread():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def main(argv=None) -> int:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the base seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="override the output directory")
    common.add_argument("--single-thread", action="store_true", default=argparse.SUPPRESS,
                        help="run replications sequentially in one thread")
    ap = argparse.ArgumentParser(prog="pkgfn", description=__doc__, parents=[common])
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("run", "compare-optimizers"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--config", required=True)
    sub.add_parser("list-problems", parents=[common])
    args = ap.parse_args(argv)
    for key, default in (("seed", None), ("out_dir", None), ("single_thread", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    if args.single_thread:
        _force_single_thread()
    if args.cmd == "list-problems":
        for name, K, d, costs, budget in list_problems():
            print(f"{name:8s} K={K} d={d} costs={list(costs)} budget={budget:g}")
        return 0
    try:
        cfg = ExperimentConfig.from_toml(args.config)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out_dir or cfg.out_dir
    if args.cmd == "run":
        report = run_experiment(cfg, out_dir, args.single_thread)
        for a, (mean, se, n) in report.curves.items():
            print(f"{a}: final mean metric {mean[-1]:.6g} (se {se[-1]:.3g}, n={int(n[-1])})")
    else:
        rows = compare_optimizers(cfg, out_dir)
        print(f"wrote {len(rows)} rows to {Path(out_dir) / 'optimizer_comparison.csv'}")
    return 0


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {k: v for k, v in asdict(cfg).items() if v is not None}
