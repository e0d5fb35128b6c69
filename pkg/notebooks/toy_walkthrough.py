"""
Partial evaluations on the two-stage toy network
=================================================

The first node is cheap (cost 1) and the second expensive (cost 49). We fit
the node GPs on three full evaluations, look at what each node's acquisition
is worth, then run p-KGFN and EIFN to budget depletion.
"""
import numpy as np

from pkgfn.acqopt import build_inner_set, maximize_node_acq, recommend
from pkgfn.acquisition import DiscretizationConfig
from pkgfn.loop import LoopConfig, initial_design, run
from pkgfn.multistart import MultiStartConfig
from pkgfn.problems import toy_1d
from pkgfn.sampling import estimate_nu_batch, fit_network, make_base_samples

problem = toy_1d()
spec = problem.spec

# three full evaluations, as in the initial design of every replication
hist = initial_design(spec, problem.truth, problem.n_initial, seed=0)
post = fit_network(hist, problem.prior, restarts=5, seed=0)

# the current recommendation maximizes the estimated posterior mean of y_2
samples = make_base_samples(8, 64, spec.K, seed=0)
ms = MultiStartConfig()
x_star, nu = recommend(post, samples, ms, seed=0)
print("recommendation", x_star, "estimated value", round(nu, 4), "true value", round(problem.objective(x_star), 4))

# discretized inner maximization: x*, Thompson maximizers and local points
A = build_inner_set(post, x_star, DiscretizationConfig(), seed=0, ms=ms)
nu = max(nu, float(estimate_nu_batch(post, A, samples).max()))
print("inner set size", A.shape[0])

# value per unit cost of the best input at each node
for k in range(spec.K):
    res = maximize_node_acq(post, k, hist, samples, A, nu, ms, seed=0)
    print(f"node {k + 1}: value {res.value:.3e} at z = {res.input.z()}")

# full runs; the cheap node gets most of the budget
cfg = LoopConfig()
for algo in ("pkgfn", "eifn"):
    rec = run(problem, algo, budget=150, seed=0, cfg=cfg)
    print(f"{algo}: node counts {rec.node_counts}, final metric {rec.final_metric:.4f}")

# the optimum of the composite for reference
grid = np.linspace(-4, 4, 4001)
best = max(problem.objective([x]) for x in grid)
print("grid optimum", round(best, 4))
