"""One-step MDP solvers: exact argmax oracle and a dueling double-DQN learner.

Every episode starts at a sampled state, takes one action, collects the
reward, and terminates, so the optimal policy is the per-state argmax and
the Q-learning target collapses to the immediate reward. The full D3QN
machinery (dueling value/advantage heads, target network, replay buffer,
epsilon-greedy collection) is still implemented so the learner matches
its usual form and generalizes past the degenerate horizon.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import N_ACTIONS, N_STATES, SAFE, UNSAFE, action_name, all_state_bits
from .irl import greedy_actions
from .reward import ExpertRewardConfig, Optimizer, expert_reward, init_params
from .validation import DataValidationError, NumericalError, as_state_ids

_ALL_BITS = all_state_bits(8)


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    terminal: bool = True


def _check_reward_table(rewards) -> np.ndarray:
    table = np.asarray(rewards, dtype=np.float64)
    if table.shape != (N_STATES, N_ACTIONS):
        raise DataValidationError(
            f"reward table must have shape {(N_STATES, N_ACTIONS)}, got {table.shape}"
        )
    if not np.isfinite(table).all():
        raise NumericalError("reward table contains non-finite values")
    return table


class SingleStepEnv:
    """Episodes of exactly one action against a fixed reward table.

    ``state_probs`` is the start-state sampler: uniform over all 256
    states by default, or an empirical marginal from demonstrations.
    Reset sequences are deterministic under the seed.
    """

    def __init__(self, rewards, state_probs=None, seed: int = 0):
        self.rewards = _check_reward_table(rewards)
        if state_probs is None:
            probs = np.full(N_STATES, 1.0 / N_STATES)
        else:
            probs = np.asarray(state_probs, dtype=np.float64)
            if probs.shape != (N_STATES,) or (probs < 0).any():
                raise DataValidationError("state_probs must be 256 non-negative weights")
            total = probs.sum()
            if not np.isclose(total, 1.0, atol=1e-9):
                raise DataValidationError("state_probs must sum to 1")
            probs = probs / total
        self.state_probs = probs
        self._rng = np.random.default_rng(seed)

    def reset(self) -> int:
        return int(self._rng.choice(N_STATES, p=self.state_probs))

    def step(self, state: int, action: int) -> Transition:
        if not 0 <= state < N_STATES:
            raise DataValidationError(f"state must lie in [0, {N_STATES - 1}]")
        if action not in (SAFE, UNSAFE):
            raise DataValidationError("action must be 0 (safe) or 1 (unsafe)")
        return Transition(state, action, float(self.rewards[state, action]), True)


def exact_policy(rewards) -> np.ndarray:
    """Per-state argmax over action rewards; ties break to safe."""
    return greedy_actions(_check_reward_table(rewards))


class ReplayBuffer:
    """Fixed-capacity ring of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise DataValidationError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        if batch_size > len(self._items):
            raise DataValidationError("not enough transitions to sample")
        idx = self._rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


#: Trunk widths of the Q-network; heads map the 16-wide trunk output to
#: one state value and one advantage per action.
Q_TRUNK_SIZES: tuple[int, ...] = (8, 32, 16)


class DuelingQNet:
    """Dueling Q-network: shared tanh trunk, linear value/advantage heads.

    Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a'); the identity holds by
    construction and is re-checkable from the head outputs.
    """

    def __init__(self, seed: int, trunk_sizes: Sequence[int] = Q_TRUNK_SIZES):
        trunk_sizes = tuple(trunk_sizes)
        # One Glorot init over the trunk plus both heads, in a fixed draw order.
        self.trunk = init_params(seed, trunk_sizes)
        head_rng = np.random.default_rng(seed + 1)
        width = trunk_sizes[-1]
        v_limit = np.sqrt(6.0 / (width + 1))
        a_limit = np.sqrt(6.0 / (width + N_ACTIONS))
        self.value_w = head_rng.uniform(-v_limit, v_limit, size=(1, width))
        self.value_b = np.zeros(1)
        self.adv_w = head_rng.uniform(-a_limit, a_limit, size=(N_ACTIONS, width))
        self.adv_b = np.zeros(N_ACTIONS)

    def copy(self) -> "DuelingQNet":
        clone = object.__new__(DuelingQNet)
        clone.trunk = self.trunk.copy()
        clone.value_w = self.value_w.copy()
        clone.value_b = self.value_b.copy()
        clone.adv_w = self.adv_w.copy()
        clone.adv_b = self.adv_b.copy()
        return clone

    def heads(self, x) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        """(value, advantages, trunk cache) for a batch of state vectors."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        h = arr
        cache = [h]
        for w, b in zip(self.trunk.weights, self.trunk.biases):
            h = np.tanh(h @ w.T + b)  # tanh on every trunk layer; heads are linear
            cache.append(h)
        value = h @ self.value_w.T + self.value_b
        adv = h @ self.adv_w.T + self.adv_b
        return value, adv, cache

    def q_values(self, x) -> np.ndarray:
        value, adv, _ = self.heads(x)
        return value + adv - adv.mean(axis=1, keepdims=True)

    def gradients(self, cache: list[np.ndarray], up_q: np.ndarray):
        """Backprop an upstream dL/dQ through heads and trunk."""
        hidden = cache[-1]
        # dQ/dV = 1 per action summed; dQ/dA(a) = delta_a - 1/|A|
        up_v = up_q.sum(axis=1, keepdims=True)
        up_a = up_q - up_q.mean(axis=1, keepdims=True)
        g_value_w = up_v.T @ hidden
        g_value_b = up_v.sum(axis=0)
        g_adv_w = up_a.T @ hidden
        g_adv_b = up_a.sum(axis=0)
        delta = up_v @ self.value_w + up_a @ self.adv_w
        n = self.trunk.n_layers
        g_trunk_w: list[np.ndarray] = [np.empty(0)] * n
        g_trunk_b: list[np.ndarray] = [np.empty(0)] * n
        for k in range(n - 1, -1, -1):
            delta = delta * (1.0 - cache[k + 1] ** 2)
            g_trunk_w[k] = delta.T @ cache[k]
            g_trunk_b[k] = delta.sum(axis=0)
            if k > 0:
                delta = delta @ self.trunk.weights[k]
        return (g_trunk_w, g_trunk_b, g_value_w, g_value_b, g_adv_w, g_adv_b)


@dataclass(frozen=True)
class D3qnConfig:
    episodes: int = 20000
    buffer_capacity: int = 4096
    batch_size: int = 32
    learn_start: int = 200
    target_sync: int = 250
    learning_rate: float = 2e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    seed: int = 0
    #: Greedy-vs-exact agreement is refreshed on this episode cadence.
    agreement_every: int = 200

    def epsilon(self, episode: int) -> float:
        """Linear eps_start -> eps_end over the first half of the budget."""
        decay_span = max(1, self.episodes // 2)
        frac = min(1.0, episode / decay_span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass(frozen=True)
class TraceEntry:
    episode: int
    epsilon: float
    reward: float
    agreement_with_exact: float


@dataclass
class D3qnResult:
    policy: np.ndarray
    trace: list[TraceEntry]
    qnet: DuelingQNet
    q_table: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.q_table = self.qnet.q_values(_ALL_BITS)


class _QOptimizer:
    """Adam over the trunk and head parameters, descent mode."""

    def __init__(self, net: DuelingQNet, learning_rate: float):
        self._trunk_opt = Optimizer(net.trunk, learning_rate=learning_rate, maximize=False)
        heads = [net.value_w, net.value_b, net.adv_w, net.adv_b]
        self._m = [np.zeros_like(p) for p in heads]
        self._v = [np.zeros_like(p) for p in heads]
        self._lr = learning_rate
        self.steps = 0

    def step(self, net: DuelingQNet, grads) -> None:
        g_trunk_w, g_trunk_b, *head_grads = grads
        self._trunk_opt.step(net.trunk, g_trunk_w, g_trunk_b)
        self.steps += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        bc1 = 1.0 - b1**self.steps
        bc2 = 1.0 - b2**self.steps
        targets = [net.value_w, net.value_b, net.adv_w, net.adv_b]
        for p, g, m, v in zip(targets, head_grads, self._m, self._v):
            if not np.isfinite(g).all():
                raise NumericalError("non-finite gradient in Q update")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self._lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def d3qn_train(env: SingleStepEnv, config: D3qnConfig | None = None) -> D3qnResult:
    """Epsilon-greedy collection plus batched Q-regression toward targets.

    All episodes are terminal after one action, so the double-DQN bootstrap
    term vanishes and the target is exactly the observed reward; the target
    network is still maintained and synced every ``target_sync`` steps.
    """
    config = config or D3qnConfig()
    if config.episodes <= 0 or config.batch_size <= 0:
        raise DataValidationError("episodes and batch_size must be positive")
    rng = np.random.default_rng(config.seed)
    online = DuelingQNet(config.seed)
    target = online.copy()
    buffer = ReplayBuffer(config.buffer_capacity, seed=config.seed + 1)
    optimizer = _QOptimizer(online, config.learning_rate)
    reference = exact_policy(env.rewards)
    trace: list[TraceEntry] = []
    agreement = _policy_agreement(online, reference)
    for episode in range(1, config.episodes + 1):
        state = env.reset()
        eps = config.epsilon(episode)
        if rng.random() < eps:
            action = int(rng.integers(0, N_ACTIONS))
        else:
            action = int(np.argmax(online.q_values(_ALL_BITS[state])[0]))
        transition = env.step(state, action)
        buffer.push(transition)
        if len(buffer) >= max(config.batch_size, config.learn_start):
            batch = buffer.sample(config.batch_size)
            _train_step(online, optimizer, batch)
            if optimizer.steps % config.target_sync == 0:
                target = online.copy()
        if episode % config.agreement_every == 0 or episode == config.episodes:
            agreement = _policy_agreement(online, reference)
        trace.append(TraceEntry(episode, eps, transition.reward, agreement))
    policy = greedy_actions(online.q_values(_ALL_BITS))
    return D3qnResult(policy=policy, trace=trace, qnet=online)


def _policy_agreement(net: DuelingQNet, reference: np.ndarray) -> float:
    greedy = greedy_actions(net.q_values(_ALL_BITS))
    return float((greedy == reference).mean())


def _train_step(net: DuelingQNet, optimizer: _QOptimizer, batch: list[Transition]) -> None:
    states = _ALL_BITS[[t.state for t in batch]]
    actions = np.array([t.action for t in batch])
    # Terminal one-step episodes: y = r, the bootstrap term is identically zero.
    targets = np.array([t.reward for t in batch])
    value, adv, cache = net.heads(states)
    q = value + adv - adv.mean(axis=1, keepdims=True)
    picked = q[np.arange(len(batch)), actions]
    up_q = np.zeros_like(q)
    up_q[np.arange(len(batch)), actions] = (picked - targets) / len(batch)
    grads = net.gradients(cache, up_q)
    optimizer.step(net, grads)


def total_expert_reward(
    policy, expert_config: ExpertRewardConfig, demo_states
) -> float:
    """Sum of expert rewards along demo states under the policy's actions."""
    actions = np.asarray(policy, dtype=np.int64)
    if actions.shape != (N_STATES,):
        raise DataValidationError(f"policy must have {N_STATES} entries")
    states = as_state_ids(demo_states) if len(np.atleast_1d(demo_states)) else []
    total = 0.0
    for state in states:
        bits = _ALL_BITS[state].astype(np.uint8)
        total += expert_reward(bits, int(actions[state]), expert_config)
    return total


def save_policy(
    policy, q_table, path: str | Path, fingerprint: str = ""
) -> None:
    """Export ``state_id,action,q_safe,q_unsafe`` rows."""
    actions = np.asarray(policy, dtype=np.int64)
    q = np.asarray(q_table, dtype=np.float64)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(("state_id", "action", "q_safe", "q_unsafe"))
        for state in range(N_STATES):
            writer.writerow(
                (state, action_name(int(actions[state])), repr(q[state, 0]), repr(q[state, 1]))
            )


def save_trace(trace: Sequence[TraceEntry], path: str | Path, fingerprint: str = "") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(("episode", "epsilon", "reward", "agreement_with_exact"))
        for entry in trace:
            writer.writerow(
                (
                    entry.episode,
                    repr(entry.epsilon),
                    repr(entry.reward),
                    repr(entry.agreement_with_exact),
                )
            )
