"""Reward models over binary state vectors.

Two sources: a small fully connected network (tanh hidden layers, linear
read-out, one output channel per action) trained by exact reverse-mode
backprop, and a hand-crafted expert baseline made of per-feature signed
contributions plus an action-consistency bonus.

All numerics are float64; the analytic gradients are validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FEATURE_ORDER
from .validation import DataValidationError, NumericalError, as_bit_matrix

#: Layer widths of the reward network: 8 state bits in, one reward per action out.
REWARD_LAYER_SIZES: tuple[int, ...] = (8, 32, 16, 32, 2)

PARAMS_FORMAT = "reward-net"
PARAMS_VERSION = 1
EXPERT_FORMAT = "expert-reward"
EXPERT_VERSION = 1


@dataclass
class MlpParams:
    """Weights (fan_out x fan_in) and biases of a fully connected network."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DataValidationError("one weight matrix and bias vector per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise DataValidationError(
                    f"layer {k}: expected shapes {(sizes[k + 1], sizes[k])} and "
                    f"({sizes[k + 1]},), got {w.shape} and {b.shape}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericalError(f"layer {k}: non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def ravel(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )


def init_params(
    seed: int, layer_sizes: Sequence[int] = REWARD_LAYER_SIZES
) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    Each weight is uniform in +/- sqrt(6 / (fan_in + fan_out)), drawn from
    numpy's default generator (PCG64) layer by layer, so a fixed seed gives
    bit-identical parameters.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise DataValidationError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases)


def forward(params: MlpParams, x) -> np.ndarray:
    """Network output for a batch of state vectors.

    Hidden layers apply tanh; the final layer is a plain affine read-out,
    so rewards are unbounded linear combinations of the learned features.
    Accepts (n, d) or a single (d,) vector and matches the output shape.
    """
    out, _ = forward_cached(params, x)
    return out


def forward_cached(params: MlpParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping per-layer activations for backprop."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    h = arr[np.newaxis, :] if single else arr
    if h.ndim != 2 or h.shape[1] != params.layer_sizes[0]:
        raise DataValidationError(
            f"expected input width {params.layer_sizes[0]}, got shape {arr.shape}"
        )
    cache = [h]
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if k == last else np.tanh(z)
        cache.append(h)
    return (h[0] if single else h), cache


def backward(
    params: MlpParams, cache: list[np.ndarray], upstream
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradient of sum(upstream * output) w.r.t. every weight and bias.

    ``cache`` comes from :func:`forward_cached` on the same inputs;
    ``upstream`` is dL/d(output) with the same shape as the output.
    """
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1:
        up = up[np.newaxis, :]
    if up.shape != cache[-1].shape:
        raise DataValidationError(
            f"upstream shape {up.shape} does not match output {cache[-1].shape}"
        )
    grad_w: list[np.ndarray] = [np.empty(0)] * params.n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * params.n_layers
    delta = up
    for k in range(params.n_layers - 1, -1, -1):
        if k != params.n_layers - 1:
            # d tanh(z) = 1 - tanh(z)^2, recovered from the cached activation
            delta = delta * (1.0 - cache[k + 1] ** 2)
        grad_w[k] = delta.T @ cache[k]
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ params.weights[k]
    return grad_w, grad_b


def grad_norm(grad_w: list[np.ndarray], grad_b: list[np.ndarray]) -> float:
    total = 0.0
    for g in (*grad_w, *grad_b):
        total += float((g * g).sum())
    return float(np.sqrt(total))


@dataclass
class Optimizer:
    """Adaptive-moment (default) or plain gradient step, in ascent direction.

    ``step`` mutates the passed parameters in place; a zero gradient leaves
    them unchanged apart from the step counter.
    """

    params_like: MlpParams
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    algorithm: str = "adam"
    maximize: bool = True
    step_count: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.algorithm not in ("adam", "sgd"):
            raise DataValidationError(f"unknown optimizer algorithm {self.algorithm!r}")
        if self.learning_rate <= 0:
            raise DataValidationError("learning rate must be positive")
        self._m_w = [np.zeros_like(w) for w in self.params_like.weights]
        self._m_b = [np.zeros_like(b) for b in self.params_like.biases]
        self._v_w = [np.zeros_like(w) for w in self.params_like.weights]
        self._v_b = [np.zeros_like(b) for b in self.params_like.biases]

    def step(
        self,
        params: MlpParams,
        grad_w: list[np.ndarray],
        grad_b: list[np.ndarray],
    ) -> None:
        for g in (*grad_w, *grad_b):
            if not np.isfinite(g).all():
                raise NumericalError("non-finite gradient")
        self.step_count += 1
        sign = 1.0 if self.maximize else -1.0
        if self.algorithm == "sgd":
            for w, gw in zip(params.weights, grad_w):
                w += sign * self.learning_rate * gw
            for b, gb in zip(params.biases, grad_b):
                b += sign * self.learning_rate * gb
            return
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for target, grads, ms, vs in (
            (params.weights, grad_w, self._m_w, self._v_w),
            (params.biases, grad_b, self._m_b, self._v_b),
        ):
            for p, g, m, v in zip(target, grads, ms, vs):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p += sign * self.learning_rate * (m / bc1) / (
                    np.sqrt(v / bc2) + self.epsilon
                )

    def config_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "maximize": self.maximize,
        }


def params_to_dict(
    params: MlpParams, seed: int | None = None, optimizer: Mapping | None = None
) -> dict:
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "weights": [w.ravel().tolist() for w in params.weights],  # row-major
        "biases": [b.tolist() for b in params.biases],
        "init_seed": seed,
        "optimizer": dict(optimizer) if optimizer else None,
    }


def save_params(
    params: MlpParams,
    path: str | Path,
    seed: int | None = None,
    optimizer: Mapping | None = None,
    fingerprint: str = "",
) -> None:
    doc = params_to_dict(params, seed=seed, optimizer=optimizer)
    if fingerprint:
        doc["fingerprint"] = fingerprint
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_params(path: str | Path) -> MlpParams:
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"parameter file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != PARAMS_FORMAT:
        raise DataValidationError(f"{path}: not a reward-net parameter file")
    if doc.get("version") != PARAMS_VERSION:
        raise DataValidationError(f"{path}: unsupported version {doc.get('version')!r}")
    sizes = tuple(int(s) for s in doc["layer_sizes"])
    weights = [
        np.array(flat, dtype=np.float64).reshape(fan_out, fan_in)
        for flat, fan_in, fan_out in zip(doc["weights"], sizes[:-1], sizes[1:])
    ]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    return MlpParams(sizes, weights, biases)


@dataclass(frozen=True)
class ExpertRewardConfig:
    """Hand-crafted per-feature reward rules.

    Each feature contributes +weight when its bit takes the safe value and
    -weight when unsafe; the action then earns +consistency_bonus if it
    agrees with the sign of the aggregate (a non-negative aggregate calls
    for "safe") and -consistency_bonus otherwise. Weights live in
    configuration files, never in code.
    """

    weights: tuple[float, ...]
    consistency_bonus: float
    feature_order: tuple[str, ...] = FEATURE_ORDER

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.feature_order):
            raise DataValidationError(
                f"need one weight per feature ({len(self.feature_order)}), "
                f"got {len(self.weights)}"
            )
        if not all(np.isfinite(w) for w in self.weights):
            raise DataValidationError("expert weights must be finite")
        if not np.isfinite(self.consistency_bonus):
            raise DataValidationError("consistency bonus must be finite")

    def weight_of(self, feature: str) -> float:
        try:
            return self.weights[self.feature_order.index(feature)]
        except ValueError:
            raise DataValidationError(f"unknown feature {feature!r}") from None

    def to_dict(self) -> dict:
        return {
            "format": EXPERT_FORMAT,
            "version": EXPERT_VERSION,
            "feature_order": list(self.feature_order),
            "weights": {f: w for f, w in zip(self.feature_order, self.weights)},
            "consistency_bonus": self.consistency_bonus,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExpertRewardConfig":
        if doc.get("format") != EXPERT_FORMAT:
            raise DataValidationError("not an expert-reward config document")
        if doc.get("version") != EXPERT_VERSION:
            raise DataValidationError(f"unsupported version {doc.get('version')!r}")
        order = tuple(doc["feature_order"])
        weight_map = doc["weights"]
        missing = [f for f in order if f not in weight_map]
        if missing:
            raise DataValidationError(f"weights missing for features: {missing}")
        return cls(
            weights=tuple(float(weight_map[f]) for f in order),
            consistency_bonus=float(doc["consistency_bonus"]),
            feature_order=order,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExpertRewardConfig":
        path = Path(path)
        if not path.exists():
            raise DataValidationError(f"expert reward config not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def expert_reward(bits, action: int, config: ExpertRewardConfig) -> float:
    """Hand-crafted reward of one (state, action) pair."""
    b = as_bit_matrix(bits, n_bits=len(config.feature_order))[0]
    if action not in (0, 1):
        raise DataValidationError(f"action must be 0 (safe) or 1 (unsafe), got {action!r}")
    w = np.asarray(config.weights)
    contributions = np.where(b == 0, w, -w)
    aggregate = float(contributions.sum())
    wants_safe = aggregate >= 0.0
    consistent = (action == 0) == wants_safe
    bonus = config.consistency_bonus if consistent else -config.consistency_bonus
    return aggregate + bonus


def expert_reward_table(config: ExpertRewardConfig) -> np.ndarray:
    """(n_states, 2) expert rewards over the whole state space."""
    n_bits = len(config.feature_order)
    ids = np.arange(1 << n_bits)
    bits = ((ids[:, None] >> np.arange(n_bits)[None, :]) & 1).astype(np.float64)
    w = np.asarray(config.weights)
    aggregate = (np.where(bits == 0, w, -w)).sum(axis=1)
    wants_safe = aggregate >= 0.0
    bonus = np.where(wants_safe, config.consistency_bonus, -config.consistency_bonus)
    table = np.empty((ids.size, 2))
    table[:, 0] = aggregate + bonus
    table[:, 1] = aggregate - bonus
    return table
