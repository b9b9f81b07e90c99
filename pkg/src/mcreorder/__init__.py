"""Reorder Monte Carlo sample pools so sequential prefixes converge early."""

__version__ = "0.1.0"

from .samples import (  # noqa: E402
    PriorSpec,
    RandomStream,
    SamplePool,
    SelectionState,
    generate_pool,
    load_pool,
)
from .selection import (  # noqa: E402
    BatchConfig,
    ConvergenceReport,
    PolicySpec,
    SelectionTrace,
    batch_reorder,
    greedy_reorder,
    random_reorder,
    replicate_harness,
)
from .wasserstein import (  # noqa: E402
    Objective,
    WassersteinVector,
    eval_batch,
    eval_candidate,
    w1_sorted,
    wass_vector,
)

__all__ = [
    "BatchConfig",
    "ConvergenceReport",
    "Objective",
    "PolicySpec",
    "PriorSpec",
    "RandomStream",
    "SamplePool",
    "SelectionState",
    "SelectionTrace",
    "WassersteinVector",
    "batch_reorder",
    "eval_batch",
    "eval_candidate",
    "generate_pool",
    "greedy_reorder",
    "load_pool",
    "random_reorder",
    "replicate_harness",
    "w1_sorted",
    "wass_vector",
]
