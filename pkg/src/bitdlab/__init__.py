"""Forward, backward and bidirectional value learning on tabular MDPs."""
from .approx import FeatureMap, MultiHeadNet, forward_all, gradient, init_net, zero_net
from .diagnostics import find_stale_demo, mstde, rmsve
from .exact import (ValueTable, contraction_factor, solve_backward, solve_bidirectional,
                    solve_forward)
from .harness import ExperimentConfig, run_single, run_sweep, summarize
from .kernels import BACKEND
from .learners import Learner, LearnerConfig
from .mdp import Policy, TabularMdp, backward_kernel, build_chain, build_two_state, load_mdp

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ExperimentConfig", "FeatureMap", "Learner", "LearnerConfig", "MultiHeadNet",
    "Policy", "TabularMdp", "ValueTable", "backward_kernel", "build_chain", "build_two_state",
    "contraction_factor", "find_stale_demo", "forward_all", "gradient", "init_net", "load_mdp",
    "mstde", "rmsve", "run_single", "run_sweep", "solve_backward", "solve_bidirectional",
    "solve_forward", "summarize", "zero_net",
]
