"""Single-timescale actor-critic on finite average-reward MDPs, with exact oracles."""

from .errors import (
    AssumptionOneViolated,
    ConfigError,
    Diverged,
    MixingTooSlow,
    NonErgodic,
    ParameterError,
)
from .features import FeatureMap, make_centered_basis, make_centered_onehot, make_random_bounded
from .mdp import FiniteMdp, generate_garnet, induced_chain, m2
from .policy import BoltzmannPolicy, policy_constants

__version__ = "0.1.0"
