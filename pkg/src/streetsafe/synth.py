"""Synthetic ground-truth experts for end-to-end verification.

Generates a known reward function (network or hand-crafted linear form),
samples one-step demonstrations from its softmax or greedy policy, and
hands both to the pipeline so recovery quality can be measured against
the truth. All sampling is seeded.
"""

from __future__ import annotations

import numpy as np

from .encoder import N_STATES
from .irl import Demonstration, DemonstrationSet, greedy_actions, softmax_rows
from .reward import (
    REWARD_LAYER_SIZES,
    ExpertRewardConfig,
    MlpParams,
    expert_reward_table,
    init_params,
)
from .validation import DataValidationError


def synth_reward_net(
    seed: int,
    sharpness: float = 4.0,
    layer_sizes=REWARD_LAYER_SIZES,
) -> MlpParams:
    """A random ground-truth reward network with controllable decisiveness.

    Glorot-initialized, then the output layer is scaled by ``sharpness``
    so per-state action-reward gaps are large enough that the softmax
    policy is opinionated rather than near-uniform.
    """
    if sharpness <= 0:
        raise DataValidationError("sharpness must be positive")
    params = init_params(seed, layer_sizes)
    params.weights[-1] *= sharpness
    params.biases[-1] *= sharpness
    return params


def deviant_expert_config(
    base: ExpertRewardConfig, flip_features: tuple[str, ...], seed: int = 0
) -> ExpertRewardConfig:
    """A ground-truth variant of a hand-crafted config with flipped weights.

    Used to build populations whose true preferences disagree with the
    hand-crafted baseline on the named features.
    """
    weights = list(base.weights)
    for name in flip_features:
        if name not in base.feature_order:
            raise DataValidationError(f"unknown feature {name!r}")
        idx = base.feature_order.index(name)
        weights[idx] = -weights[idx]
    return ExpertRewardConfig(
        weights=tuple(weights),
        consistency_bonus=base.consistency_bonus,
        feature_order=base.feature_order,
    )


def sample_demos_softmax(
    rewards: np.ndarray,
    n_demos: int,
    seed: int,
    n_states: int = N_STATES,
    state_probs=None,
) -> DemonstrationSet:
    """Sample (state, action) pairs: states from ``state_probs`` (uniform
    over the first ``n_states`` ids by default), actions from the softmax
    policy of the reward table."""
    table = np.asarray(rewards, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != 2:
        raise DataValidationError("rewards must be an (n_states, 2) table")
    if not 1 <= n_states <= table.shape[0]:
        raise DataValidationError(f"n_states must lie in [1, {table.shape[0]}]")
    if n_demos <= 0:
        raise DataValidationError("n_demos must be positive")
    rng = np.random.default_rng(seed)
    if state_probs is None:
        states = rng.integers(0, n_states, size=n_demos)
    else:
        probs = np.asarray(state_probs, dtype=np.float64)
        states = rng.choice(len(probs), size=n_demos, p=probs / probs.sum())
    policy = softmax_rows(table)
    draws = rng.random(n_demos)
    actions = (draws < policy[states, 1]).astype(np.int64)
    return DemonstrationSet(
        [Demonstration(int(s), int(a)) for s, a in zip(states, actions)]
    )


def greedy_demo_set(rewards: np.ndarray, states=None) -> DemonstrationSet:
    """One demonstration per state with the reward's greedy action."""
    table = np.asarray(rewards, dtype=np.float64)
    actions = greedy_actions(table)
    if states is None:
        states = np.arange(table.shape[0])
    states = np.asarray(states, dtype=np.int64)
    return DemonstrationSet(
        [Demonstration(int(s), int(actions[s])) for s in states]
    )


def linear_expert_table(
    weights: tuple[float, ...], consistency_bonus: float
) -> tuple[ExpertRewardConfig, np.ndarray]:
    """Convenience: build a hand-crafted config and its full reward table."""
    config = ExpertRewardConfig(weights=weights, consistency_bonus=consistency_bonus)
    return config, expert_reward_table(config)
