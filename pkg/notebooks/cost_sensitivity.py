"""
How the second node's cost shapes p-KGFN's allocation
======================================================

With equal costs there is little reason to avoid the second node; at cost 49
the first node is probed many times per second-node evaluation.
"""
import numpy as np

from pkgfn.loop import LoopConfig, run
from pkgfn.problems import toy_1d

cfg = LoopConfig()
for costs, budget in (((1.0, 1.0), 50), ((1.0, 9.0), 150), ((1.0, 49.0), 150)):
    problem = toy_1d().with_costs(costs)
    counts = np.array([run(problem, "pkgfn", budget, seed, cfg).node_counts for seed in range(3)])
    n1, n2 = counts.sum(axis=0)
    ratio = n1 / n2 if n2 else float("inf")
    print(f"c2 = {costs[1]:>4g}, budget {budget}: node counts per seed {counts.tolist()}, pooled ratio {ratio:.2f}")
