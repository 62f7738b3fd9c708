"""External clustering indices: Rand Index and Normalized Mutual Information."""

import numpy as np

from .core import InvalidArgument


def contingency(truth, pred) -> np.ndarray:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise InvalidArgument(f"label vectors differ in shape: {truth.shape} vs {pred.shape}")
    _, ti = np.unique(truth, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def _pairs(x):
    x = np.asarray(x, dtype=np.int64)
    return int(np.sum(x * (x - 1) // 2))


def rand_index(truth, pred) -> float:
    """(TP + TN) / C(N, 2), from the contingency table in O(N + K^2)."""
    table = contingency(truth, pred)
    N = int(table.sum())
    if N < 2:
        raise InvalidArgument("Rand Index needs at least two items")
    total = N * (N - 1) // 2
    tp = _pairs(table)
    same_truth = _pairs(table.sum(axis=1))
    same_pred = _pairs(table.sum(axis=0))
    tn = total - same_truth - same_pred + tp
    return (tp + tn) / total


def nmi_details(truth, pred):
    """NMI and a flag telling whether the single-cluster convention applied.

    With natural logs and ``0 log 0 = 0``::

        NMI = sum_ij N_ij log(N N_ij / (|G_i| |A_j|))
              / sqrt(sum_i |G_i| log(|G_i|/N) * sum_j |A_j| log(|A_j|/N))

    If either partition is a single cluster the denominator vanishes and 0
    is returned with the flag set.
    """
    table = contingency(truth, pred).astype(float)
    N = table.sum()
    g = table.sum(axis=1)
    a = table.sum(axis=0)
    hg = float(np.sum(g * np.log(g / N)))
    ha = float(np.sum(a * np.log(a / N)))
    if hg == 0.0 or ha == 0.0:
        return 0.0, True
    nz = table > 0
    outer = np.outer(g, a)
    mi = float(np.sum(table[nz] * np.log(N * table[nz] / outer[nz])))
    return mi / np.sqrt(hg * ha), False


def nmi(truth, pred) -> float:
    return nmi_details(truth, pred)[0]
