"""One-vs-rest linear SVM with a dual coordinate descent solver.

Each binary subproblem minimizes the L2-regularized hinge loss

    P(w) = 0.5 ||w||^2 + C * sum_i max(0, 1 - y_i w.x_i)

through its dual, one alpha coordinate at a time with a seeded random
permutation per epoch. The bias is handled by augmenting every sample with
a constant-1 feature (so it is regularized like the other weights). The
per-class decision values w_c.x + b_c form the score matrix that feeds
voting and fusion; they are signed distances, not probabilities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ShapeError, ValidationError
from .rng import DOMAIN_SOLVER, stream
from .validation import check_2d, check_finite, check_labels

MODEL_MAGIC = b"LSVM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    tol: float = 1e-4
    max_iter: int = 1000
    seed: int = 0


@dataclass
class LinearModel:
    """Per-class weights and biases plus training metadata."""

    weights: np.ndarray  # (n_classes, n_features)
    biases: np.ndarray  # (n_classes,)
    config: SvmConfig
    iterations: tuple[int, ...] = ()
    objectives: tuple[float, ...] = ()

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def _solve_binary(xb, y_signed, qii, cfg: SvmConfig, class_index: int):
    """Dual coordinate descent on one binary subproblem.

    xb is the bias-augmented (n, d+1) matrix; returns the augmented weight
    vector and the epoch count. Stops when the largest projected gradient
    magnitude over an epoch drops below tol.
    """
    n = xb.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(xb.shape[1])
    perm = stream(cfg.seed, DOMAIN_SOLVER, class_index)
    c_up = cfg.C
    epochs = 0
    for _ in range(cfg.max_iter):
        epochs += 1
        max_pg = 0.0
        for i in perm.permutation(n):
            xi = xb[i]
            yi = y_signed[i]
            g = yi * float(w @ xi) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= c_up:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                if abs(pg) > max_pg:
                    max_pg = abs(pg)
                a_new = min(max(a - g / qii[i], 0.0), c_up)
                if a_new != a:
                    w += (a_new - a) * yi * xi
                    alpha[i] = a_new
        if max_pg < cfg.tol:
            break
    return w, epochs


def primal_objective(w_aug: np.ndarray, xb: np.ndarray, y_signed: np.ndarray, C: float) -> float:
    """L2-regularized hinge objective at an augmented weight vector."""
    margins = y_signed * (xb @ w_aug)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return 0.5 * float(w_aug @ w_aug) + C * float(hinge)


def train_ovr(X, y, cfg: SvmConfig = SvmConfig()) -> LinearModel:
    """Train one binary subproblem per class, deterministically from the seed."""
    X = check_2d(np.asarray(X, dtype=np.float64), "X")
    check_finite(X, "X")
    y = check_labels(y, X.shape[0])
    n_classes = int(y.max()) + 1
    if n_classes < 2:
        raise ValidationError("need at least 2 classes")
    if X.shape[0] < n_classes:
        raise ValidationError(
            f"need at least as many samples ({X.shape[0]}) as classes ({n_classes})"
        )
    xb = np.hstack([X, np.ones((X.shape[0], 1))])
    qii = np.einsum("ij,ij->i", xb, xb)
    weights = np.empty((n_classes, X.shape[1]))
    biases = np.empty(n_classes)
    iterations = []
    objectives = []
    for c in range(n_classes):
        y_signed = np.where(y == c, 1.0, -1.0)
        w_aug, epochs = _solve_binary(xb, y_signed, qii, cfg, c)
        weights[c] = w_aug[:-1]
        biases[c] = w_aug[-1]
        iterations.append(epochs)
        objectives.append(primal_objective(w_aug, xb, y_signed, cfg.C))
    return LinearModel(
        weights=weights,
        biases=biases,
        config=cfg,
        iterations=tuple(iterations),
        objectives=tuple(objectives),
    )


def decision_scores(model: LinearModel, X) -> np.ndarray:
    """Score matrix S[n, c] = w_c . x_n + b_c."""
    X = check_2d(np.asarray(X, dtype=np.float64), "X")
    if X.shape[1] != model.n_features:
        raise ShapeError(
            f"model expects {model.n_features} features, got {X.shape[1]}"
        )
    return X @ model.weights.T + model.biases


def predict(scores) -> np.ndarray:
    """Per-row argmax; ties go to the smallest class index."""
    scores = check_2d(scores, "scores")
    return np.argmax(scores, axis=1)


def topk_accuracy(scores, y, k: int) -> float:
    """Fraction of rows whose true class ranks in the k best scores.

    Ranking ties are resolved toward the smaller class index (stable sort
    on descending score).
    """
    scores = check_2d(np.asarray(scores, dtype=np.float64), "scores")
    y = np.asarray(y)
    if y.shape[0] != scores.shape[0]:
        raise ShapeError("scores and labels disagree in length")
    if not 1 <= k <= scores.shape[1]:
        raise ValidationError(f"k must be in 1..{scores.shape[1]}, got {k}")
    order = np.argsort(-scores, axis=1, kind="stable")
    hits = (order[:, :k] == y[:, None]).any(axis=1)
    return float(hits.mean())


def confusion_matrix(pred, y, n_classes: int) -> np.ndarray:
    """Counts M[i, j] = number of samples with true class i predicted j."""
    pred = np.asarray(pred)
    y = np.asarray(y)
    if pred.shape != y.shape:
        raise ShapeError("pred and y disagree in shape")
    if ((y < 0) | (y >= n_classes)).any() or ((pred < 0) | (pred >= n_classes)).any():
        raise ValidationError(f"labels out of range 0..{n_classes - 1}")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y, pred), 1)
    return m


def per_category_accuracy(m: np.ndarray) -> np.ndarray:
    """Diagonal rate per row; rows with no samples yield NaN."""
    m = np.asarray(m, dtype=np.float64)
    totals = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.diag(m) / totals
    return rates


def serialize_model(model: LinearModel) -> bytes:
    """Flat binary blob: magic, version, N, dim, float32 weights, biases."""
    head = MODEL_MAGIC + struct.pack(
        "<III", MODEL_VERSION, model.n_classes, model.n_features
    )
    w = np.ascontiguousarray(model.weights, dtype="<f4").tobytes()
    b = np.ascontiguousarray(model.biases, dtype="<f4").tobytes()
    return head + w + b


def deserialize_model(blob: bytes) -> LinearModel:
    if blob[:4] != MODEL_MAGIC:
        raise ValidationError("not a model blob (bad magic)")
    version, n_classes, dim = struct.unpack_from("<III", blob, 4)
    if version != MODEL_VERSION:
        raise ValidationError(f"unsupported model version {version}")
    offset = 16
    w_bytes = 4 * n_classes * dim
    expected = offset + w_bytes + 4 * n_classes
    if len(blob) != expected:
        raise ValidationError(
            f"model blob has {len(blob)} bytes, expected {expected}"
        )
    weights = np.frombuffer(blob, dtype="<f4", count=n_classes * dim, offset=offset)
    biases = np.frombuffer(blob, dtype="<f4", count=n_classes, offset=offset + w_bytes)
    return LinearModel(
        weights=weights.reshape(n_classes, dim).astype(np.float64),
        biases=biases.astype(np.float64),
        config=SvmConfig(),
    )


def save_model(model: LinearModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> LinearModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())


class LinearSVMClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style front end over `train_ovr` / `decision_scores`."""

    def __init__(self, C: float = 1.0, tol: float = 1e-4, max_iter: int = 1000, seed: int = 0):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y):
        cfg = SvmConfig(C=self.C, tol=self.tol, max_iter=self.max_iter, seed=self.seed)
        self.model_ = train_ovr(X, y, cfg)
        self.classes_ = np.arange(self.model_.n_classes)
        return self

    def decision_function(self, X):
        return decision_scores(self.model_, X)

    def predict(self, X):
        return predict(self.decision_function(X))
