"""Level preprocessing: reshape plus random / max / average pooling.

Pooling runs over either the number of maps (contiguous groups of maps are
combined elementwise) or the spatial extent (non-overlapping square windows
within each map). Random weighted pooling draws one uniform weight in
[-0.1, 0.1] per element of each pooling area - one weight per member map in
maps mode, one per pixel in spatial mode - from the seed lineage, once per
(level, stage), and reuses those weights for every sample of a run.

Non-divisible source/target pairs are a configuration error; nothing is
padded silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConfigurationError, ShapeError
from .rng import DOMAIN_POOL, uniform_weights
from .tensor_io import ActivationTensor

POOL_METHODS = ("random", "max", "average")
_STAGE_MAPS = 0
_STAGE_SPATIAL = 1


@dataclass(frozen=True)
class PoolSpec:
    """One pooling stage: mode, source/target dims, method, seed lineage."""

    mode: str  # "maps" | "spatial"
    source: tuple[int, int]  # (K, s)
    target: tuple[int, int]  # (K', s')
    method: str = "random"
    level: int = 0  # seed lineage key component

    def __post_init__(self):
        k, s = self.source
        kt, st = self.target
        if self.mode == "maps":
            if not (kt < k and k % kt == 0):
                raise ConfigurationError(
                    f"maps pooling needs K' < K and K % K' == 0, got K={k}, K'={kt}"
                )
            if st != s:
                raise ConfigurationError(
                    f"maps pooling must preserve spatial size, got s={s}, s'={st}"
                )
        elif self.mode == "spatial":
            if kt != k:
                raise ConfigurationError(
                    f"spatial pooling must preserve map count, got K={k}, K'={kt}"
                )
            if not (st < s and s % st == 0):
                raise ConfigurationError(
                    f"spatial pooling needs s' < s and s % s' == 0, got s={s}, s'={st}"
                )
        else:
            raise ConfigurationError(f"unknown pooling mode {self.mode!r}")
        if self.method not in POOL_METHODS:
            raise ConfigurationError(f"unknown pooling method {self.method!r}")

    @property
    def area_size(self) -> int:
        if self.mode == "maps":
            return self.source[0] // self.target[0]
        win = self.source[1] // self.target[1]
        return win * win


def pool_weights(spec: PoolSpec, seed: int) -> np.ndarray:
    """Materialize the random weights for one pooling stage.

    Shape (K,) in maps mode (one weight per input map) and (s, s) in spatial
    mode (one weight per input pixel, shared across maps). Deterministic in
    (seed, spec.level, spec.mode).
    """
    stage = _STAGE_MAPS if spec.mode == "maps" else _STAGE_SPATIAL
    if spec.mode == "maps":
        shape: tuple[int, ...] = (spec.source[0],)
    else:
        shape = (spec.source[1], spec.source[1])
    return uniform_weights(shape, seed, DOMAIN_POOL, spec.level, stage)


def constant_pool_weights(spec: PoolSpec) -> np.ndarray:
    """All weights forced to 1/|area|, making random pooling equal averaging."""
    if spec.mode == "maps":
        shape: tuple[int, ...] = (spec.source[0],)
    else:
        shape = (spec.source[1], spec.source[1])
    return np.full(shape, 1.0 / spec.area_size, dtype=np.float32)


def _check_batch(values: np.ndarray, spec: PoolSpec) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 4:
        raise ShapeError(f"expected a batched (n, K, s, s) array, got {values.shape}")
    k, s = spec.source
    if values.shape[1:] != (k, s, s):
        raise ShapeError(
            f"tensor shape {values.shape[1:]} does not match spec source {(k, s, s)}"
        )
    return values


def _pool_batch(
    values: np.ndarray,
    spec: PoolSpec,
    reducer: str,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    values = _check_batch(values, spec)
    n = values.shape[0]
    k, s = spec.source
    kt, st = spec.target
    if spec.mode == "maps":
        grouped = values.reshape(n, kt, k // kt, s, s)
        if reducer == "max":
            return grouped.max(axis=2)
        if reducer == "average":
            return grouped.mean(axis=2, dtype=values.dtype)
        w = np.asarray(weights, dtype=values.dtype)
        if w.shape != (k,):
            raise ShapeError(f"maps-mode weights must have shape ({k},), got {w.shape}")
        return (grouped * w.reshape(1, kt, k // kt, 1, 1)).sum(axis=2)
    win = s // st
    windowed = values.reshape(n, k, st, win, st, win)
    if reducer == "max":
        return windowed.max(axis=(3, 5))
    if reducer == "average":
        return windowed.mean(axis=(3, 5), dtype=values.dtype)
    w = np.asarray(weights, dtype=values.dtype)
    if w.shape != (s, s):
        raise ShapeError(f"spatial weights must have shape ({s}, {s}), got {w.shape}")
    return (windowed * w.reshape(1, 1, st, win, st, win)).sum(axis=(3, 5))


def _as_single(t: ActivationTensor, spec: PoolSpec) -> np.ndarray:
    if t.values.ndim != 3:
        raise ShapeError(f"pooling needs a rank-3 tensor, got shape {t.shape}")
    return t.values[None]


def random_pool(
    t: ActivationTensor,
    spec: PoolSpec,
    seed: int = 0,
    weights: np.ndarray | None = None,
) -> ActivationTensor:
    """Weighted-sum pooling with fixed random weights (or injected ones)."""
    if weights is None:
        weights = pool_weights(spec, seed)
    out = _pool_batch(_as_single(t, spec), spec, "random", weights)[0]
    return ActivationTensor(values=out, level_tag=t.level_tag)


def max_pool(t: ActivationTensor, spec: PoolSpec) -> ActivationTensor:
    out = _pool_batch(_as_single(t, spec), spec, "max")[0]
    return ActivationTensor(values=out, level_tag=t.level_tag)


def avg_pool(t: ActivationTensor, spec: PoolSpec) -> ActivationTensor:
    out = _pool_batch(_as_single(t, spec), spec, "average")[0]
    return ActivationTensor(values=out, level_tag=t.level_tag)


def reshape_to_form(t: ActivationTensor, target: tuple[int, ...]) -> ActivationTensor:
    """Row-major reinterpretation of the buffer; data untouched."""
    if int(np.prod(t.shape)) != int(np.prod(target)):
        raise ShapeError(
            f"cannot reshape {t.shape} ({int(np.prod(t.shape))} elements) "
            f"to {tuple(target)} ({int(np.prod(target))} elements)"
        )
    return ActivationTensor(
        values=t.values.reshape(target).copy(), level_tag=t.level_tag
    )


PREPROCESS_KINDS = ("reshape", "pool_maps", "pool_spatial", "pool_both")


@dataclass(frozen=True)
class LevelSpec:
    """How one extraction level reaches its canonical (K, s, s) form."""

    level: int
    raw_shape: tuple[int, ...]
    target_shape: tuple[int, int, int]
    preprocess: str
    method: str = "random"

    def __post_init__(self):
        if not 1 <= self.level <= 7:
            raise ConfigurationError(f"level must be in 1..7, got {self.level}")
        if self.preprocess not in PREPROCESS_KINDS:
            raise ConfigurationError(f"unknown preprocess kind {self.preprocess!r}")
        if self.method not in POOL_METHODS:
            raise ConfigurationError(f"unknown pooling method {self.method!r}")
        raw = tuple(int(x) for x in self.raw_shape)
        tgt = tuple(int(x) for x in self.target_shape)
        if len(tgt) != 3:
            raise ConfigurationError(f"target shape must be rank 3, got {tgt}")
        if int(np.prod(tgt)) > int(np.prod(raw)):
            raise ConfigurationError(
                f"level {self.level}: target {tgt} has more elements than raw {raw}"
            )
        # Force evaluation of the pooling chain so impossible targets fail at
        # configuration time, not mid-run.
        self.stages()

    def stages(self) -> list[PoolSpec]:
        """The pooling stages implied by this spec (empty for pure reshape)."""
        raw = tuple(int(x) for x in self.raw_shape)
        kt, st, st2 = self.target_shape
        if st != st2:
            raise ConfigurationError(
                f"level {self.level}: target spatial extents must match, got "
                f"{self.target_shape}"
            )
        if self.preprocess == "reshape":
            if int(np.prod(raw)) != kt * st * st:
                raise ConfigurationError(
                    f"level {self.level}: reshape cannot turn {raw} into "
                    f"{self.target_shape} (element counts differ)"
                )
            return []
        if len(raw) != 3:
            raise ConfigurationError(
                f"level {self.level}: pooling needs a rank-3 raw shape, got {raw}"
            )
        k, s, s2 = raw
        if s != s2:
            raise ConfigurationError(
                f"level {self.level}: raw spatial extents must match, got {raw}"
            )
        stages = []
        try:
            if self.preprocess in ("pool_maps", "pool_both"):
                stages.append(
                    PoolSpec(
                        mode="maps",
                        source=(k, s),
                        target=(kt, s),
                        method=self.method,
                        level=self.level,
                    )
                )
                k = kt
            if self.preprocess in ("pool_spatial", "pool_both"):
                stages.append(
                    PoolSpec(
                        mode="spatial",
                        source=(k, s),
                        target=(k, st),
                        method=self.method,
                        level=self.level,
                    )
                )
                s = st
        except ConfigurationError as exc:
            raise ConfigurationError(
                f"level {self.level}: target {self.target_shape} unreachable from "
                f"{raw}: {exc}"
            ) from exc
        if (k, s) != (kt, st):
            raise ConfigurationError(
                f"level {self.level}: preprocess {self.preprocess!r} reaches "
                f"({k}, {s}, {s}), not target {self.target_shape}"
            )
        return stages


def preprocess_batch(
    values: np.ndarray,
    spec: LevelSpec,
    seed: int = 0,
    force_constant_weights: bool = False,
) -> np.ndarray:
    """Apply a LevelSpec to a batch laid out as (n, *raw_shape).

    `force_constant_weights` replaces the random weights of every stage by
    1/|area| (for equivalence checks against average pooling).
    """
    values = np.asarray(values, dtype=np.float32)
    raw = tuple(int(x) for x in spec.raw_shape)
    if values.shape[1:] != raw:
        raise ShapeError(
            f"level {spec.level}: batch shape {values.shape[1:]} does not match "
            f"raw shape {raw}"
        )
    n = values.shape[0]
    if spec.preprocess == "reshape":
        return values.reshape((n, *spec.target_shape))
    for stage in spec.stages():
        if spec.method == "random":
            w = constant_pool_weights(stage) if force_constant_weights else pool_weights(stage, seed)
            values = _pool_batch(values, stage, "random", w)
        else:
            values = _pool_batch(values, stage, spec.method)
    return values


def preprocess_level(t: ActivationTensor, spec: LevelSpec, seed: int = 0) -> ActivationTensor:
    """Bring one raw level tensor into its canonical (K, s, s) form."""
    if t.shape != tuple(int(x) for x in spec.raw_shape):
        raise ShapeError(
            f"level {spec.level}: tensor shape {t.shape} does not match raw shape "
            f"{tuple(spec.raw_shape)}"
        )
    out = preprocess_batch(t.values[None], spec, seed)[0]
    return ActivationTensor(values=out, level_tag=spec.level)


class LevelPreprocessor(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping `preprocess_batch` for one level.

    Accepts (n, *raw_shape) arrays, or flat (n, prod(raw_shape)) matrices as
    produced by feature stores, and emits (n, K, s, s).
    """

    def __init__(self, level_spec: LevelSpec = None, seed: int = 0):
        self.level_spec = level_spec
        self.seed = seed

    def fit(self, X, y=None):
        if self.level_spec is None:
            raise ConfigurationError("LevelPreprocessor needs a level_spec")
        return self

    def transform(self, X):
        self.fit(X)
        X = np.asarray(X, dtype=np.float32)
        raw = tuple(int(x) for x in self.level_spec.raw_shape)
        if X.ndim == 2 and X.shape[1] == int(np.prod(raw)):
            X = X.reshape((X.shape[0], *raw))
        return preprocess_batch(X, self.level_spec, self.seed)
