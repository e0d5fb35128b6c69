"""Cost-aware Bayesian optimization of function networks with partial evaluations."""
from .acqopt import Selection, build_inner_set, maximize_node_acq, one_shot_maximize, recommend, select_next
from .acquisition import (
    AcqConfig,
    AcqResult,
    DiscretizationConfig,
    ei_value,
    eifn_value,
    kg_value,
    kgfn_full_value,
    pkgfn_value,
    pkgfn_gains,
    pkgfn_values,
    tsfn_suggest,
)
from .gp import GammaPrior, HyperPrior, KernelHyperparams, NodeDataset, NodeGP, fantasy_condition, map_fit
from .loop import ALGORITHMS, LoopConfig, RunRecord, initial_design, metric_eval, run
from .multistart import MultiStartConfig
from .network import (
    CandidateInput,
    NetworkHistory,
    NetworkSpec,
    NetworkSpecError,
    PreconditionError,
    enumerate_candidates,
    full_evaluate,
    partial_evaluate,
)
from .problems import PROBLEMS, ProblemInstance, get_problem, with_noise
from .sampling import (
    BaseSampleSet,
    NetworkPosterior,
    estimate_nu,
    fit_network,
    make_base_samples,
    sample_network_path,
)

__version__ = "0.1.0"
