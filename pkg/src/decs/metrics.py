"""External clustering metrics: accuracy under optimal matching, and NMI."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def _check_pair(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    if pred.size == 0:
        raise ValueError("empty labelings")
    return pred, truth


def contingency_table(pred, truth):
    """Counts of (predicted cluster, true class) pairs; rows follow ``np.unique(pred)``."""
    pred, truth = _check_pair(pred, truth)
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(truth, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table


def accuracy(pred, truth):
    """Best fraction of matched labels over all one-to-one relabelings of ``pred``."""
    table = contingency_table(pred, truth)
    size = max(table.shape)
    square = np.zeros((size, size), dtype=np.int64)
    square[:table.shape[0], :table.shape[1]] = table
    rows, cols = linear_sum_assignment(square, maximize=True)
    return float(square[rows, cols].sum() / table.sum())


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth):
    """Mutual information normalized by the geometric mean of the two entropies.

    Two single-cluster partitions score 1; if exactly one side is a single
    cluster the mutual information is zero and so is the score.
    """
    table = contingency_table(pred, truth).astype(np.float64)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    return float(min(max(mi / np.sqrt(h_pred * h_true), 0.0), 1.0))


def evaluation_report(pred, truth):
    pred, truth = _check_pair(pred, truth)
    return {
        "n": int(pred.size),
        "k": int(np.unique(pred).size),
        "acc": accuracy(pred, truth),
        "nmi": nmi(pred, truth),
    }
