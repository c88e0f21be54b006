"""Multi-level and multi-modal combination of features and SVM scores.

Level fusion is either plain feature concatenation or soft voting
(averaging score matrices). Modality fusion blends the RGB and depth score
vectors of each test sample with confidence weights

    m_i = ||S_i||^2 / max(||S_rgb||^2, ||S_depth||^2)
    w_i = sqrt(exp(m_i) / sum_j exp(m_j))
    y   = argmax_n (w_rgb * S_rgb[n] + w_depth * S_depth[n])

so the stream that is more confident on a sample contributes more to its
label. Weights are computed per test sample by default; a run-level
aggregate variant (one weight pair from the score norms of the whole
matrix) exists for ablation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .validation import check_2d, check_same_shape


@dataclass(frozen=True)
class ModalityWeights:
    """Per-sample normalized squared magnitudes and the vote weights."""

    m_rgb: float
    m_depth: float
    w_rgb: float
    w_depth: float
    degenerate: bool = False  # both score rows were all-zero


def concat_levels(*features: np.ndarray) -> np.ndarray:
    """Concatenate per-level feature vectors (or matrices) in given order."""
    if not features:
        raise ShapeError("concat_levels needs at least one input")
    arrays = [np.asarray(f) for f in features]
    axis = arrays[0].ndim - 1
    return np.concatenate(arrays, axis=axis)


def average_vote(score_matrices) -> np.ndarray:
    """Elementwise mean of identically shaped score matrices."""
    mats = [check_2d(np.asarray(s, dtype=np.float64), "scores") for s in score_matrices]
    if not mats:
        raise ShapeError("average_vote needs at least one score matrix")
    for m in mats[1:]:
        check_same_shape(mats[0], m, "score matrices")
    return np.mean(mats, axis=0)


def _weight_pair(nr: float, nd: float) -> tuple[float, float, float, float, bool]:
    top = max(nr, nd)
    if top == 0.0:
        m_rgb = m_depth = 1.0
        degenerate = True
    else:
        m_rgb, m_depth = nr / top, nd / top
        degenerate = False
    e_rgb, e_depth = np.exp(m_rgb), np.exp(m_depth)
    total = e_rgb + e_depth
    return m_rgb, m_depth, float(np.sqrt(e_rgb / total)), float(np.sqrt(e_depth / total)), degenerate


def modality_weights(s_rgb_row, s_depth_row) -> ModalityWeights:
    """Confidence weights for one test sample's RGB and depth score rows.

    When both rows are all-zero (untrained or absent modality) the weights
    fall back to the equal-contribution pair and the result is flagged.
    """
    r = np.asarray(s_rgb_row, dtype=np.float64).ravel()
    d = np.asarray(s_depth_row, dtype=np.float64).ravel()
    if r.shape != d.shape:
        raise ShapeError(f"score rows disagree in length: {r.shape} vs {d.shape}")
    m_rgb, m_depth, w_rgb, w_depth, degenerate = _weight_pair(
        float(r @ r), float(d @ d)
    )
    return ModalityWeights(m_rgb, m_depth, w_rgb, w_depth, degenerate)


def modality_weight_table(s_rgb, s_depth) -> np.ndarray:
    """Per-sample weights for whole score matrices.

    Returns an (n, 5) array of columns (m_rgb, m_depth, w_rgb, w_depth,
    degenerate flag as 0/1).
    """
    s_rgb = check_2d(np.asarray(s_rgb, dtype=np.float64), "rgb scores")
    s_depth = check_2d(np.asarray(s_depth, dtype=np.float64), "depth scores")
    check_same_shape(s_rgb, s_depth, "score matrices")
    nr = np.einsum("ij,ij->i", s_rgb, s_rgb)
    nd = np.einsum("ij,ij->i", s_depth, s_depth)
    top = np.maximum(nr, nd)
    degenerate = top == 0.0
    safe_top = np.where(degenerate, 1.0, top)
    m_rgb = np.where(degenerate, 1.0, nr / safe_top)
    m_depth = np.where(degenerate, 1.0, nd / safe_top)
    e_rgb, e_depth = np.exp(m_rgb), np.exp(m_depth)
    total = e_rgb + e_depth
    w_rgb = np.sqrt(e_rgb / total)
    w_depth = np.sqrt(e_depth / total)
    return np.column_stack([m_rgb, m_depth, w_rgb, w_depth, degenerate.astype(float)])


def weighted_scores(s_rgb, s_depth, per_sample: bool = True) -> np.ndarray:
    """Blend the two score matrices with confidence weights."""
    s_rgb = check_2d(np.asarray(s_rgb, dtype=np.float64), "rgb scores")
    s_depth = check_2d(np.asarray(s_depth, dtype=np.float64), "depth scores")
    check_same_shape(s_rgb, s_depth, "score matrices")
    if per_sample:
        table = modality_weight_table(s_rgb, s_depth)
        w_rgb = table[:, 2][:, None]
        w_depth = table[:, 3][:, None]
    else:
        _, _, wr, wd, _ = _weight_pair(
            float(np.sum(s_rgb * s_rgb)), float(np.sum(s_depth * s_depth))
        )
        w_rgb, w_depth = wr, wd
    return w_rgb * s_rgb + w_depth * s_depth


def weighted_vote(s_rgb, s_depth, per_sample: bool = True) -> np.ndarray:
    """Predicted labels from the confidence-weighted blend; ties go low."""
    return np.argmax(weighted_scores(s_rgb, s_depth, per_sample=per_sample), axis=1)


def write_fusion_csv(path, sample_ids, weight_table: np.ndarray, preds) -> None:
    """Audit CSV: sample_id, m_rgb, m_depth, w_rgb, w_depth, pred."""
    preds = np.asarray(preds)
    if not (len(sample_ids) == weight_table.shape[0] == preds.shape[0]):
        raise ShapeError("sample ids, weights, and predictions disagree in length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "m_rgb", "m_depth", "w_rgb", "w_depth", "pred"])
        for sid, row, p in zip(sample_ids, weight_table, preds):
            writer.writerow(
                [sid, f"{row[0]:.9f}", f"{row[1]:.9f}", f"{row[2]:.9f}", f"{row[3]:.9f}", int(p)]
            )
