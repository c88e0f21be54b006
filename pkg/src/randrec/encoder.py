"""Fixed random recursive encoding of canonical (K, s, s) activations.

Each encoder is a tree-structured network with a tied, never-trained weight
matrix drawn uniformly from [-0.1, 0.1]. The default single-level tree
merges the whole s x s grid of K-dim children into one parent in a single
step: p = tanh(W v), with v the child vector obtained by flattening the
grid spatial-position-major, channels fastest. Deeper trees merge 2x2
neighborhoods repeatedly with the same tied matrix until one node remains.

Concatenating the K-dim parents of `num_rnns` independent encoders yields
the level feature (8192 dims at the defaults of 128 encoders x 64
channels). Everything here is a pure function of (input, config, level,
master seed); the weight streams are keyed so results never depend on
evaluation order or thread schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConfigurationError, ShapeError
from .rng import DOMAIN_RNN, uniform_weights

WEIGHT_LOW = -0.1
WEIGHT_HIGH = 0.1

# tanh saturates to exactly +-1.0 in floating point for large inputs; the
# encoder contract is the open interval, so saturated values are nudged to
# the nearest representable interior value.
_ONE_INSIDE = np.nextafter(np.float32(1.0), np.float32(0.0))


def _tanh_open(x: np.ndarray) -> np.ndarray:
    return np.clip(np.tanh(x, dtype=np.float32), -_ONE_INSIDE, _ONE_INSIDE)


@dataclass(frozen=True)
class EncoderConfig:
    """Shape and seed lineage of the random-encoder bank."""

    num_rnns: int = 128
    channels: int = 64  # K
    block_size: int = 8  # s
    tree_depth: int = 1
    child_block: int = 2  # children per side when tree_depth > 1
    master_seed: int = 0

    def __post_init__(self):
        if self.num_rnns < 1:
            raise ConfigurationError("num_rnns must be >= 1")
        if self.channels < 1 or self.block_size < 1:
            raise ConfigurationError("channels and block_size must be positive")
        if self.tree_depth < 1:
            raise ConfigurationError("tree_depth must be >= 1")
        if self.tree_depth > 1 and self.child_block**self.tree_depth != self.block_size:
            raise ConfigurationError(
                f"multi-level tree needs block_size == child_block**tree_depth; "
                f"got {self.block_size} != {self.child_block}**{self.tree_depth}"
            )

    @property
    def weight_columns(self) -> int:
        """Width of one tied matrix: s^2*K single-level, (child block)^2*K deep."""
        if self.tree_depth == 1:
            return self.block_size * self.block_size * self.channels
        return self.child_block * self.child_block * self.channels

    @property
    def feature_dim(self) -> int:
        return self.num_rnns * self.channels


@dataclass(frozen=True)
class RnnWeights:
    """One encoder's tied matrix plus its provenance."""

    matrix: np.ndarray  # (K, columns) float32
    bounds: tuple[float, float]
    key: tuple[int, int, int]  # (master_seed, level, rnn_index)

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeError(f"weight matrix must be 2-D, got {self.matrix.shape}")


def generate_weights(cfg: EncoderConfig, level: int, rnn_index: int) -> RnnWeights:
    """Draw the tied matrix for (master_seed, level, rnn_index).

    Entries are i.i.d. uniform on [-0.1, 0.1] from a counter-based stream,
    so the same key yields a bit-identical matrix on any machine and under
    any generation order.
    """
    if not 0 <= rnn_index < cfg.num_rnns:
        raise ConfigurationError(
            f"rnn_index {rnn_index} out of range 0..{cfg.num_rnns - 1}"
        )
    shape = (cfg.channels, cfg.weight_columns)
    m = uniform_weights(
        shape, cfg.master_seed, DOMAIN_RNN, level, rnn_index,
        low=WEIGHT_LOW, high=WEIGHT_HIGH,
    )
    return RnnWeights(
        matrix=m,
        bounds=(WEIGHT_LOW, WEIGHT_HIGH),
        key=(cfg.master_seed, level, rnn_index),
    )


def child_vector(values: np.ndarray) -> np.ndarray:
    """Flatten (K, s, s) spatial-position-major, channels fastest."""
    if values.ndim != 3:
        raise ShapeError(f"expected (K, s, s), got {values.shape}")
    return np.ascontiguousarray(values.transpose(1, 2, 0)).reshape(-1)


def encode_single(values: np.ndarray, weights: RnnWeights) -> np.ndarray:
    """One-level encoding: p = tanh(W v) for the whole grid at once."""
    v = child_vector(np.asarray(values, dtype=np.float32))
    w = weights.matrix
    if w.shape[1] != v.shape[0]:
        raise ShapeError(
            f"weight matrix expects child vectors of length {w.shape[1]}, "
            f"got {v.shape[0]}"
        )
    return _tanh_open(w @ v)


def encode_multilevel(values: np.ndarray, weights: RnnWeights, depth: int) -> np.ndarray:
    """Merge 2x2 neighborhoods with the tied matrix until one node remains."""
    grid = np.asarray(values, dtype=np.float32)
    if grid.ndim != 3:
        raise ShapeError(f"expected (K, s, s), got {grid.shape}")
    k, s, _ = grid.shape
    if s != 2**depth:
        raise ShapeError(f"grid side {s} is not 2**depth for depth={depth}")
    w = weights.matrix
    if w.shape != (k, 4 * k):
        raise ShapeError(
            f"tied matrix for 2x2 merging must be ({k}, {4 * k}), got {w.shape}"
        )
    for _ in range(depth):
        half = grid.shape[1] // 2
        blocks = (
            grid.reshape(k, half, 2, half, 2)
            .transpose(1, 3, 2, 4, 0)
            .reshape(half, half, 4 * k)
        )
        grid = _tanh_open(blocks @ w.T).transpose(2, 0, 1)
    return grid[:, 0, 0]


@lru_cache(maxsize=8)
def _stacked_weights_cached(cfg: EncoderConfig, level: int) -> np.ndarray:
    rows = [generate_weights(cfg, level, i).matrix for i in range(cfg.num_rnns)]
    return np.concatenate(rows, axis=0)


def stacked_weights(cfg: EncoderConfig, level: int) -> np.ndarray:
    """All encoder matrices stacked (num_rnns*K, columns), index order."""
    return _stacked_weights_cached(cfg, level)


def encode_level(values: np.ndarray, cfg: EncoderConfig, level: int) -> np.ndarray:
    """Concatenate every encoder's parent vector for one input tensor."""
    return encode_batch(np.asarray(values)[None], cfg, level)[0]


def encode_batch(values: np.ndarray, cfg: EncoderConfig, level: int) -> np.ndarray:
    """Encode a batch (n, K, s, s) to (n, num_rnns * K) float32.

    The single-level path runs as one matrix product against the stacked
    weights; the row blocks of that product are exactly the per-encoder
    outputs in index order, so batch and per-sample evaluation agree.
    """
    x = np.asarray(values, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError(f"expected a batch (n, K, s, s), got {x.shape}")
    n, k, s, s2 = x.shape
    if k != cfg.channels or s != cfg.block_size or s2 != cfg.block_size:
        raise ShapeError(
            f"batch tensors are {x.shape[1:]}, config expects "
            f"({cfg.channels}, {cfg.block_size}, {cfg.block_size})"
        )
    if cfg.tree_depth == 1:
        v = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n, -1)
        w_all = stacked_weights(cfg, level)
        return _tanh_open(v @ w_all.T)
    out = np.empty((n, cfg.feature_dim), dtype=np.float32)
    for i in range(cfg.num_rnns):
        w = generate_weights(cfg, level, i)
        for j in range(n):
            out[j, i * cfg.channels : (i + 1) * cfg.channels] = encode_multilevel(
                x[j], w, cfg.tree_depth
            )
    return out


class RandomRecursiveEncoder(BaseEstimator, TransformerMixin):
    """Stateless sklearn-style transformer over the encoder bank.

    Accepts (n, K, s, s) batches or flat (n, K*s*s) matrices (reshaped
    row-major). `fit` only validates; there is nothing to learn.
    """

    def __init__(
        self,
        num_rnns: int = 128,
        channels: int = 64,
        block_size: int = 8,
        tree_depth: int = 1,
        child_block: int = 2,
        master_seed: int = 0,
        level: int = 1,
    ):
        self.num_rnns = num_rnns
        self.channels = channels
        self.block_size = block_size
        self.tree_depth = tree_depth
        self.child_block = child_block
        self.master_seed = master_seed
        self.level = level

    def _config(self) -> EncoderConfig:
        return EncoderConfig(
            num_rnns=self.num_rnns,
            channels=self.channels,
            block_size=self.block_size,
            tree_depth=self.tree_depth,
            child_block=self.child_block,
            master_seed=self.master_seed,
        )

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X):
        cfg = self._config()
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 2:
            X = X.reshape(
                (X.shape[0], cfg.channels, cfg.block_size, cfg.block_size)
            )
        return encode_batch(X, cfg, self.level)
