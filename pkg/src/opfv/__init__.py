"""Future off-policy evaluation and learning for non-stationary contextual bandits."""
from .dataset import LoggedDataset
from .env import SyntheticEnv, make_env
from .estimators import (
    EstimateResult,
    dm,
    dr_naive,
    ips,
    opfv,
    opfv_extended,
    prognosticator,
    prognosticator_phi,
    sndr,
    snips,
)
from .exceptions import ConfigError, DomainError, NumericError, OPFVError, SupportError
from .policy import PolicyGradientLearner, SoftmaxPolicy, TrainConfig, train
from .reward import DirectRewardModel, OracleRewardModel, TwoStageRewardModel, ZeroRewardModel
from .timefeat import TimeDistribution, TimeFeatureFn, calendar_feature, feature_of, marginal_prob
from .tuning import CandidateSet, tune_phi

__version__ = "0.1.0"

__all__ = [
    "LoggedDataset",
    "SyntheticEnv",
    "make_env",
    "EstimateResult",
    "ips",
    "dr_naive",
    "dm",
    "snips",
    "sndr",
    "opfv",
    "opfv_extended",
    "prognosticator",
    "prognosticator_phi",
    "OPFVError",
    "ConfigError",
    "DomainError",
    "SupportError",
    "NumericError",
    "SoftmaxPolicy",
    "TrainConfig",
    "train",
    "PolicyGradientLearner",
    "DirectRewardModel",
    "TwoStageRewardModel",
    "OracleRewardModel",
    "ZeroRewardModel",
    "TimeFeatureFn",
    "TimeDistribution",
    "calendar_feature",
    "feature_of",
    "marginal_prob",
    "CandidateSet",
    "tune_phi",
    "__version__",
]
