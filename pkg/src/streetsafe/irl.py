"""Single-step maximum-entropy IRL over the 256-state space.

With one-step episodes the path distribution per start state reduces to a
softmax over the two action rewards, so the objective is the mean demo
log-probability and its gradient w.r.t. each reward entry is the joint
empirical policy minus the expected visitation, empirical-marginal times
learned-conditional. That 256x2 gradient is pushed through the reward
network by backprop each epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .encoder import N_ACTIONS, N_STATES, SAFE, UNSAFE, action_index, action_name, all_state_bits
from .reward import REWARD_LAYER_SIZES, MlpParams, Optimizer, backward, forward_cached, grad_norm, init_params
from .validation import DataValidationError, NumericalError, as_state_ids

_ALL_BITS = all_state_bits(8)


@dataclass(frozen=True)
class Demonstration:
    """One (state, action) pair standing in for an expert evaluation."""

    state: int
    action: int

    def __post_init__(self) -> None:
        if not 0 <= self.state < N_STATES:
            raise DataValidationError(f"state must lie in [0, {N_STATES - 1}]")
        if self.action not in (SAFE, UNSAFE):
            raise DataValidationError("action must be 0 (safe) or 1 (unsafe)")


class DemonstrationSet:
    """Demonstrations plus their per-state and joint visit counts."""

    def __init__(self, items: Sequence[Demonstration]):
        self.items: list[Demonstration] = list(items)
        counts = np.zeros((N_STATES, N_ACTIONS), dtype=np.int64)
        for demo in self.items:
            counts[demo.state, demo.action] += 1
        self.counts = counts

    def __len__(self) -> int:
        return len(self.items)

    @property
    def state_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def states(self) -> np.ndarray:
        return np.array([d.state for d in self.items], dtype=np.int64)

    @property
    def actions(self) -> np.ndarray:
        return np.array([d.action for d in self.items], dtype=np.int64)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "DemonstrationSet":
        return cls([Demonstration(int(s), int(a)) for s, a in pairs])

    @classmethod
    def from_labels(
        cls,
        state_ids,
        labels: Sequence[str],
        weights: Sequence[int] | None = None,
    ) -> "DemonstrationSet":
        """Build demonstrations from encoded states and safety labels.

        One demonstration per image by default; ``weights`` (e.g. per-image
        comparison counts) replicates each pair as a confidence weight.
        """
        ids = as_state_ids(state_ids)
        if len(ids) != len(labels):
            raise DataValidationError("state ids and labels must be equal length")
        if weights is not None and len(weights) != len(ids):
            raise DataValidationError("weights must match state ids in length")
        items = []
        for i, (state, label) in enumerate(zip(ids, labels)):
            action = action_index(label)
            repeat = 1 if weights is None else int(weights[i])
            if repeat < 0:
                raise DataValidationError("weights must be non-negative")
            items.extend(Demonstration(int(state), action) for _ in range(repeat))
        return cls(items)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("state_id", "action"))
            for demo in self.items:
                writer.writerow((demo.state, action_name(demo.action)))

    @classmethod
    def load(cls, path: str | Path) -> "DemonstrationSet":
        path = Path(path)
        if not path.exists():
            raise DataValidationError(f"demonstration file not found: {path}")
        items = []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(ln for ln in fh if not ln.startswith("#"))
            header = next(reader, None)
            if header != ["state_id", "action"]:
                raise DataValidationError(f"{path}: bad demonstration header")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise DataValidationError(f"{path}: line {line_no}: expected 2 columns")
                try:
                    state = int(row[0])
                except ValueError:
                    raise DataValidationError(
                        f"{path}: line {line_no}: malformed state id {row[0]!r}"
                    ) from None
                items.append(Demonstration(state, action_index(row[1])))
        return cls(items)


@dataclass(frozen=True)
class EmpiricalPolicy:
    """Joint and conditional demo statistics.

    joint[s, a] = N(s, a) / N; state_weights[s] = N(s) / N; conditional
    rows are defined (mask True) only for visited states and are zero
    elsewhere.
    """

    joint: np.ndarray
    state_weights: np.ndarray
    conditional: np.ndarray
    mask: np.ndarray


def empirical_policy(demos: DemonstrationSet) -> EmpiricalPolicy:
    if len(demos) == 0:
        raise DataValidationError("demonstration set is empty")
    n = float(len(demos))
    joint = demos.counts / n
    state_weights = demos.state_counts / n
    mask = demos.state_counts > 0
    conditional = np.zeros_like(joint)
    conditional[mask] = demos.counts[mask] / demos.state_counts[mask, None]
    return EmpiricalPolicy(joint, state_weights, conditional, mask)


def softmax_rows(rewards: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1 within 1e-12."""
    r = np.asarray(rewards, dtype=np.float64)
    shifted = r - r.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def reward_table(params: MlpParams) -> np.ndarray:
    """(256, 2) network rewards over the whole state space."""
    out, _ = forward_cached(params, _ALL_BITS)
    return out


def maxent_policy(params: MlpParams) -> np.ndarray:
    """Max-entropy conditional policy pi(a|s) = softmax over action rewards."""
    return softmax_rows(reward_table(params))


def reward_gradient(
    joint: np.ndarray, state_weights: np.ndarray, policy: np.ndarray
) -> np.ndarray:
    """dL/dR(s, a) = joint empirical minus expected visitation.

    Exactly pi_D(s,a) - p(s) * pi(a|s); identically zero on unvisited
    states, and each visited row sums to zero.
    """
    if joint.shape != policy.shape or state_weights.shape[0] != joint.shape[0]:
        raise DataValidationError("mismatched shapes for reward gradient")
    return joint - state_weights[:, None] * policy


def table_log_likelihood(rewards: np.ndarray, demos: DemonstrationSet) -> float:
    """Mean demo log-probability under the softmax policy of a frozen table."""
    if len(demos) == 0:
        raise DataValidationError("demonstration set is empty")
    log_policy = np.log(softmax_rows(rewards))
    return float((demos.counts * log_policy).sum() / len(demos))


def log_likelihood(params: MlpParams, demos: DemonstrationSet) -> float:
    return table_log_likelihood(reward_table(params), demos)


def greedy_actions(rewards: np.ndarray) -> np.ndarray:
    """Per-state argmax actions; ties break to safe (index 0)."""
    r = np.asarray(rewards)
    return np.where(r[:, UNSAFE] > r[:, SAFE], UNSAFE, SAFE).astype(np.int64)


def behavior_agreement(rewards: np.ndarray, demos: DemonstrationSet) -> float:
    """Fraction of demonstrations matching the greedy action of ``rewards``."""
    actions = greedy_actions(rewards)
    matched = demos.counts[np.arange(N_STATES), actions].sum()
    return float(matched) / len(demos)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    log_likelihood: float
    grad_norm: float
    agreement: float


class MaxEntIrl(BaseEstimator):
    """Recover a reward network whose max-entropy policy matches demos.

    Full-batch training: every epoch computes the policy over all 256
    states, forms the empirical-minus-expected gradient on the reward
    table, backpropagates it through the network, and takes one ascent
    step. Stops when the parameter-gradient norm drops below ``tol`` or
    after ``max_epochs``.

    Attributes after fit: ``params_`` (network weights), ``history_``
    (per-epoch stats), ``n_epochs_``.
    """

    def __init__(
        self,
        learning_rate: float = 1e-3,
        max_epochs: int = 5000,
        tol: float = 1e-6,
        seed: int = 0,
        optimizer: str = "adam",
        layer_sizes: Sequence[int] = REWARD_LAYER_SIZES,
    ):
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.tol = tol
        self.seed = seed
        self.optimizer = optimizer
        self.layer_sizes = layer_sizes

    def fit(self, demos: DemonstrationSet, y=None) -> "MaxEntIrl":
        if self.max_epochs <= 0 or self.tol <= 0:
            raise DataValidationError("max_epochs and tol must be positive")
        empirical = empirical_policy(demos)
        params = init_params(self.seed, self.layer_sizes)
        opt = Optimizer(
            params,
            learning_rate=self.learning_rate,
            algorithm=self.optimizer,
            maximize=True,
        )
        history: list[EpochStats] = []
        for epoch in range(1, self.max_epochs + 1):
            rewards, cache = forward_cached(params, _ALL_BITS)
            policy = softmax_rows(rewards)
            objective = float((demos.counts * np.log(policy)).sum() / len(demos))
            if not np.isfinite(objective):
                raise NumericalError(f"non-finite objective at epoch {epoch}")
            upstream = reward_gradient(empirical.joint, empirical.state_weights, policy)
            grad_w, grad_b = backward(params, cache, upstream)
            norm = grad_norm(grad_w, grad_b)
            history.append(
                EpochStats(epoch, objective, norm, behavior_agreement(rewards, demos))
            )
            if norm < self.tol:
                break
            opt.step(params, grad_w, grad_b)
        self.params_ = params
        self.history_ = history
        self.n_epochs_ = len(history)
        self._optimizer_config = opt.config_dict()
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit() before using the learned policy")

    def reward_table(self) -> np.ndarray:
        self._check_fitted()
        return reward_table(self.params_)

    def policy_table(self) -> np.ndarray:
        self._check_fitted()
        return maxent_policy(self.params_)

    def predict_proba(self, state_ids) -> np.ndarray:
        """Conditional action probabilities for the given states."""
        ids = as_state_ids(state_ids)
        return self.policy_table()[ids]

    def predict(self, state_ids) -> np.ndarray:
        """Greedy actions for the given states (ties break to safe)."""
        ids = as_state_ids(state_ids)
        return greedy_actions(self.reward_table())[ids]

    def score(self, demos: DemonstrationSet, y=None) -> float:
        """Mean demo log-probability under the learned policy."""
        self._check_fitted()
        return log_likelihood(self.params_, demos)


def save_history(
    history: Sequence[EpochStats], path: str | Path, fingerprint: str = ""
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(("epoch", "log_likelihood", "grad_norm", "agreement"))
        for entry in history:
            writer.writerow(
                (
                    entry.epoch,
                    repr(entry.log_likelihood),
                    repr(entry.grad_norm),
                    repr(entry.agreement),
                )
            )
