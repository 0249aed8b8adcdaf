"""Stochastic domination of Bernoulli vectors conditioned on their number of successes."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    BerncondError,
    BlockSystem,
    CondKind,
    ConditioningSpec,
    ConfigError,
    DiscretePMF,
    InfeasibleError,
    InstanceTooLargeError,
    default_size_rule,
    validate,
)
from .transport import Betas, CouplingPlan, betas, max_coupling_scalar, max_coupling_vector, sup_prob_exact  # noqa: E402
from .asymptotics import (  # noqa: E402
    AsymptoticReport,
    CenterSolution,
    abc_constants,
    classify_regime,
    f_k,
    hat_quantities,
    p_k,
    solve_a,
    solve_d,
    z_k,
)
from .montecarlo import SampleBatch, sample_conditioned, sup_prob_estimate  # noqa: E402

__all__ = [
    "AsymptoticReport",
    "BerncondError",
    "Betas",
    "BlockSystem",
    "CenterSolution",
    "CondKind",
    "ConditioningSpec",
    "ConfigError",
    "CouplingPlan",
    "DiscretePMF",
    "InfeasibleError",
    "InstanceTooLargeError",
    "SampleBatch",
    "abc_constants",
    "betas",
    "classify_regime",
    "default_size_rule",
    "f_k",
    "hat_quantities",
    "max_coupling_scalar",
    "max_coupling_vector",
    "p_k",
    "sample_conditioned",
    "solve_a",
    "solve_d",
    "sup_prob_estimate",
    "sup_prob_exact",
    "validate",
    "z_k",
    "__version__",
]
