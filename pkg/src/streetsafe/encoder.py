"""Binary safe/unsafe state encoding and the 256-state index space.

Each continuous feature is thresholded at its training-set mean; a
polarity flag per feature says which side of the threshold reads as the
unsafe factor. Bit k of a state id is the k-th feature in the configured
order (LSB first), giving a bijection between 8-bit state vectors and
ids 0..255.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .features import (
    BINARY_FEATURES,
    FEATURE_ORDER,
    FeatureTable,
    FeatureVector,
)
from .validation import DataValidationError, as_bit_matrix, as_state_ids

N_STATES = 256
N_ACTIONS = 2
SAFE = 0
UNSAFE = 1
ACTION_NAMES: tuple[str, str] = ("safe", "unsafe")

ENCODER_FORMAT = "binary-state-encoder"
ENCODER_VERSION = 1
# Bit-order convention 1: bit k of the state id is feature_order[k], LSB first.
BIT_ORDER_VERSION = 1

#: Default orientation: True means the above-threshold side is the unsafe one.
#: Only wire presence is pinned by evidence; the rest follow the qualitative
#: literature on street-scene perception and are overridable configuration.
DEFAULT_POLARITY: dict[str, bool] = {
    "greenery": False,
    "sky": False,
    "wall": True,
    "fence": True,
    "sidewalk": False,
    "wire": True,
    "entropy": True,
    "car_count": True,
}


def action_index(name: str) -> int:
    try:
        return ACTION_NAMES.index(name)
    except ValueError:
        raise DataValidationError(f"unknown action {name!r}") from None


def action_name(index: int) -> str:
    if index not in (SAFE, UNSAFE):
        raise DataValidationError(f"action index must be 0 or 1, got {index!r}")
    return ACTION_NAMES[index]


def state_id(bits) -> int:
    """Index of a state vector: sum of bits[k] * 2**k."""
    b = as_bit_matrix(bits)[0]
    weights = 1 << np.arange(b.size, dtype=np.int64)
    return int(b.astype(np.int64) @ weights)


def decode(sid: int, n_bits: int = 8) -> np.ndarray:
    """Inverse of :func:`state_id` over the 2**n_bits state space."""
    sid = int(sid)
    if not 0 <= sid < (1 << n_bits):
        raise DataValidationError(f"state id must lie in [0, {(1 << n_bits) - 1}]")
    return ((sid >> np.arange(n_bits)) & 1).astype(np.uint8)


def all_state_bits(n_bits: int = 8) -> np.ndarray:
    """(2**n_bits, n_bits) float matrix of every state vector, row s = decode(s)."""
    ids = np.arange(1 << n_bits)
    return ((ids[:, None] >> np.arange(n_bits)[None, :]) & 1).astype(np.float64)


def state_ids_from_bits(bits) -> np.ndarray:
    b = as_bit_matrix(bits)
    weights = 1 << np.arange(b.shape[1], dtype=np.int64)
    return b.astype(np.int64) @ weights


def zero_feature_bits(state_ids, feature_index: int, n_bits: int = 8) -> np.ndarray:
    """Clear one feature's bit in every state id (the ablation transform)."""
    if not 0 <= feature_index < n_bits:
        raise DataValidationError(f"feature index must lie in [0, {n_bits - 1}]")
    ids = as_state_ids(state_ids, n_states=1 << n_bits)
    return ids & ~(1 << feature_index)


class BinaryStateEncoder(BaseEstimator, TransformerMixin):
    """Threshold features at their means into safe/unsafe bits.

    Parameters
    ----------
    polarity : mapping, optional
        Per-feature overrides of :data:`DEFAULT_POLARITY` (True = the
        above-threshold side is unsafe). The wire bit always equals the
        wire field itself, presence meaning unsafe.
    feature_order : sequence of str
        Bit-position order. Fixed at the canonical eight features by
        default; overridable to extend the state space.

    After ``fit``, ``thresholds_`` holds the per-feature means of the
    training table. Values strictly greater than the threshold are "high";
    equality falls to "low", which keeps encoding deterministic.
    """

    def __init__(
        self,
        polarity: Mapping[str, bool] | None = None,
        feature_order: Sequence[str] = FEATURE_ORDER,
    ):
        self.polarity = polarity
        self.feature_order = feature_order

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, FeatureTable):
            return X.to_array(self.feature_order)
        if isinstance(X, FeatureVector):
            return X.as_array(self.feature_order)[np.newaxis, :]
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[1] != len(self.feature_order):
            raise DataValidationError(
                f"expected (n, {len(self.feature_order)}) feature matrix, "
                f"got shape {arr.shape}"
            )
        return arr

    def fit(self, X, y=None) -> "BinaryStateEncoder":
        """Fit per-feature mean thresholds on a feature table or matrix."""
        order = tuple(self.feature_order)
        matrix = self._matrix(X)
        if matrix.shape[0] == 0:
            raise DataValidationError("cannot fit thresholds on an empty table")
        polarity = dict(DEFAULT_POLARITY)
        if self.polarity:
            unknown = set(self.polarity) - set(order)
            if unknown:
                raise DataValidationError(f"polarity for unknown features: {sorted(unknown)}")
            polarity.update({k: bool(v) for k, v in self.polarity.items()})
        missing = [f for f in order if f not in polarity]
        if missing:
            raise DataValidationError(f"polarity undefined for features: {missing}")
        means = matrix.mean(axis=0)
        self.feature_order_ = order
        self.thresholds_ = {
            name: float(means[i])
            for i, name in enumerate(order)
            if name not in BINARY_FEATURES
        }
        self.polarity_ = {name: polarity[name] for name in order}
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "thresholds_"):
            raise NotFittedError("encoder must be fitted (or loaded) before use")

    def transform(self, X) -> np.ndarray:
        """Encode features into an (n, n_features) uint8 bit matrix.

        Bit = 1 iff the side of the threshold the value falls on is the
        unsafe side per polarity; binary features pass through directly.
        """
        self._check_fitted()
        matrix = self._matrix(X)
        bits = np.empty(matrix.shape, dtype=np.uint8)
        for i, name in enumerate(self.feature_order_):
            col = matrix[:, i]
            if name in BINARY_FEATURES:
                if not np.isin(col, (0, 1)).all():
                    raise DataValidationError(f"{name} values must be 0 or 1")
                bits[:, i] = col.astype(np.uint8)
            else:
                high = col > self.thresholds_[name]
                bits[:, i] = (high == self.polarity_[name]).astype(np.uint8)
        return bits

    def encode(self, features) -> np.ndarray:
        """Encode a single FeatureVector (or 1-D array) into its bit vector."""
        return self.transform(features)[0]

    def state_ids(self, X) -> np.ndarray:
        return state_ids_from_bits(self.transform(X))

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "format": ENCODER_FORMAT,
            "version": ENCODER_VERSION,
            "bit_order_version": BIT_ORDER_VERSION,
            "feature_order": list(self.feature_order_),
            "thresholds": self.thresholds_,
            "polarity": self.polarity_,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "BinaryStateEncoder":
        if data.get("format") != ENCODER_FORMAT:
            raise DataValidationError("not an encoder config document")
        if data.get("version") != ENCODER_VERSION:
            raise DataValidationError(f"unsupported encoder version {data.get('version')!r}")
        if data.get("bit_order_version") != BIT_ORDER_VERSION:
            raise DataValidationError(
                f"unsupported bit order version {data.get('bit_order_version')!r}"
            )
        order = tuple(data["feature_order"])
        encoder = cls(polarity=dict(data["polarity"]), feature_order=order)
        encoder.feature_order_ = order
        encoder.thresholds_ = {k: float(v) for k, v in data["thresholds"].items()}
        encoder.polarity_ = {k: bool(v) for k, v in data["polarity"].items()}
        return encoder

    @classmethod
    def load(cls, path: str | Path) -> "BinaryStateEncoder":
        path = Path(path)
        if not path.exists():
            raise DataValidationError(f"encoder config not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
