"""Street-view safety perception toolkit.

Encode per-image visual features into a 256-state binary space, aggregate
pairwise "which looks safer" comparisons into labels, recover a reward
function with single-step maximum-entropy IRL, solve the one-step MDP, and
attribute safety perception to individual features.
"""

from .encoder import (
    ACTION_NAMES,
    SAFE,
    UNSAFE,
    BinaryStateEncoder,
    decode,
    state_id,
)
from .features import (
    FEATURE_ORDER,
    FeatureTable,
    FeatureVector,
    compute_fov,
    compute_visual_entropy,
    load_feature_table,
)
from .irl import Demonstration, DemonstrationSet, MaxEntIrl
from .metrics import MetricsReport, auc, f1_score, learned_behavior_accuracy
from .rating import (
    ComparisonRecord,
    PlayerRating,
    TrueSkillParams,
    derive_labels,
    normalize_scores,
    replay_log,
    update,
)
from .reward import ExpertRewardConfig, expert_reward, forward, init_params
from .solver import D3qnConfig, SingleStepEnv, d3qn_train, exact_policy

__version__ = "0.1.0"

__all__ = [
    "ACTION_NAMES",
    "SAFE",
    "UNSAFE",
    "BinaryStateEncoder",
    "ComparisonRecord",
    "D3qnConfig",
    "Demonstration",
    "DemonstrationSet",
    "ExpertRewardConfig",
    "FEATURE_ORDER",
    "FeatureTable",
    "FeatureVector",
    "MaxEntIrl",
    "MetricsReport",
    "PlayerRating",
    "SingleStepEnv",
    "TrueSkillParams",
    "auc",
    "compute_fov",
    "compute_visual_entropy",
    "d3qn_train",
    "decode",
    "derive_labels",
    "exact_policy",
    "expert_reward",
    "f1_score",
    "forward",
    "init_params",
    "learned_behavior_accuracy",
    "load_feature_table",
    "normalize_scores",
    "replay_log",
    "state_id",
    "update",
]
