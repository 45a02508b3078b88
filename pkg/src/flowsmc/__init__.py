"""Posterior sampling over step-structured agentic workflows.

The sampler targets q(s) ∝ p(s)·exp(R(s)) for an autoregressive step prior p
and a terminal reward R in [0, 1], advancing a particle population one step
per round with look-ahead importance weighting, optional pool refinement, and
multinomial resampling. A brute-force enumeration oracle certifies the
sampler's convergence and drift behavior on small tabular instances.
"""

from .engine import (
    Archive,
    Particle,
    PoolEntry,
    RoundPool,
    RoundStats,
    RunConfig,
    RunResult,
    ess,
    lookahead_weight,
    normalize,
    resample,
    run,
    step_update,
    write_run_artifacts,
)
from .errors import FlowSMCError
from .evals import TaskExample, load_dataset, scaling_metrics, token_f1
from .gateway import ChatRequest, GatewayConfig, LLMGateway, UsageLedger
from .llm_prior import LLMPrior
from .oracle import (
    ExactInstance,
    expected_reward,
    kl_objective,
    tv_distance,
    weighted_majority_estimate,
)
from .priors import PriorModel, TabularPrior, derive_rng
from .refiners import (
    NullRefiner,
    Refiner,
    SoftmaxEditRefiner,
    SyntheticEpsilonRefiner,
    select_candidate,
)
from .rewards import (
    RewardCache,
    RewardModel,
    TabularReward,
    ValidationAccuracyReward,
    energy,
)
from .workflows import (
    DEFAULT_HORIZON,
    Kind,
    Step,
    Workflow,
    WorkflowId,
    concat,
    id_of,
    parse_annotated,
    render,
)

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "ChatRequest",
    "DEFAULT_HORIZON",
    "ExactInstance",
    "FlowSMCError",
    "GatewayConfig",
    "Kind",
    "LLMGateway",
    "LLMPrior",
    "NullRefiner",
    "Particle",
    "PoolEntry",
    "PriorModel",
    "Refiner",
    "RewardCache",
    "RewardModel",
    "RoundPool",
    "RoundStats",
    "RunConfig",
    "RunResult",
    "SoftmaxEditRefiner",
    "Step",
    "SyntheticEpsilonRefiner",
    "TabularPrior",
    "TabularReward",
    "TaskExample",
    "UsageLedger",
    "ValidationAccuracyReward",
    "Workflow",
    "WorkflowId",
    "concat",
    "derive_rng",
    "energy",
    "ess",
    "expected_reward",
    "id_of",
    "kl_objective",
    "load_dataset",
    "lookahead_weight",
    "normalize",
    "parse_annotated",
    "render",
    "resample",
    "run",
    "scaling_metrics",
    "select_candidate",
    "step_update",
    "token_f1",
    "tv_distance",
    "weighted_majority_estimate",
    "write_run_artifacts",
]
