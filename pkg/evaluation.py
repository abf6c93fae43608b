"""
Clustering metrics: accuracy under the best one-to-one label mapping (ACC) and
normalized mutual information (NMI).
"""
import json
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment
from scipy.stats import entropy

from exceptions import InvalidInputError, ShapeMismatchError


@dataclass
class ContingencyTable:
    counts: NDArray   # k_true x k_pred
    true_ids: NDArray
    pred_ids: NDArray

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricReport:
    acc: float
    nmi: float

    def __post_init__(self):
        for name in ("acc", "nmi"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")

    def to_record(self, dataset: Optional[str] = None, method: Optional[str] = None,
                  seed: Optional[int] = None) -> Dict[str, Any]:
        record = {"dataset": dataset, "method": method, "seed": seed}
        record.update(asdict(self))
        return record

    def to_json(self, **context) -> str:
        return json.dumps(self.to_record(**context))


def _as_labels(labels, name: str) -> NDArray:
    array = np.asarray(labels)
    if array.ndim != 1:
        raise InvalidInputError(f"{name} must be a 1-D label vector")
    if array.size and not np.issubdtype(array.dtype, np.integer):
        if not np.all(np.equal(np.mod(array, 1), 0)):
            raise InvalidInputError(f"{name} must contain integers")
        array = array.astype(np.int64)
    return array


def contingency_table(true_labels, pred_labels) -> ContingencyTable:
    true = _as_labels(true_labels, "true_labels")
    pred = _as_labels(pred_labels, "pred_labels")
    if true.shape != pred.shape:
        raise ShapeMismatchError(f"label vectors differ in length: {true.size} vs {pred.size}")
    if true.size == 0:
        raise InvalidInputError("label vectors are empty")
    true_ids, true_index = np.unique(true, return_inverse=True)
    pred_ids, pred_index = np.unique(pred, return_inverse=True)
    counts = np.zeros((true_ids.size, pred_ids.size), dtype=np.int64)
    np.add.at(counts, (true_index, pred_index), 1)
    return ContingencyTable(counts=counts, true_ids=true_ids, pred_ids=pred_ids)


def hungarian(cost: NDArray) -> NDArray:
    """
    Exact minimum-cost assignment of a square matrix.

    Returns:
        NDArray: perm with row i assigned to column perm[i]
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise InvalidInputError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidInputError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def clustering_accuracy(true_labels, pred_labels) -> float:
    """Fraction of samples matched under the best one-to-one mapping of predicted to true ids."""
    table = contingency_table(true_labels, pred_labels)
    size = max(table.counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:table.counts.shape[0], :table.counts.shape[1]] = table.counts
    perm = hungarian(-padded)
    matched = int(padded[np.arange(size), perm].sum())
    return matched / table.n


def nmi(true_labels, pred_labels) -> float:
    """
    I(true; pred) / max(H(true), H(pred)) with natural logs.

    Both partitions single-cluster gives 1.0; exactly one single-cluster gives 0.0.
    """
    table = contingency_table(true_labels, pred_labels)
    counts = table.counts
    n = table.n
    h_true = float(entropy(counts.sum(axis=1)))
    h_pred = float(entropy(counts.sum(axis=0)))
    if h_true == 0.0 and h_pred == 0.0:
        return 1.0
    if h_true == 0.0 or h_pred == 0.0:
        return 0.0

    nonzero = counts > 0
    # identical partitions up to relabeling
    if np.all(nonzero.sum(axis=0) == 1) and np.all(nonzero.sum(axis=1) == 1):
        return 1.0

    p_joint = counts / n
    p_outer = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / (n * n)
    mi = float(np.sum(p_joint[nonzero] * np.log(p_joint[nonzero] / p_outer[nonzero])))
    return float(np.clip(mi / max(h_true, h_pred), 0.0, 1.0))


def evaluate(true_labels, pred_labels) -> MetricReport:
    return MetricReport(acc=clustering_accuracy(true_labels, pred_labels), nmi=nmi(true_labels, pred_labels))
