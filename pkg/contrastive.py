"""
Adaptive homotopy contrastive loss (AHCL).

Pairs are scored by Euclidean distance d_ij. The "similar" cost is f = d^2, the
"dissimilar" cost is g = max(m - d, 0)^2, and the soft label y_ij is the closed-form
homotopy weight g / (f + g), clamped to 1 at d = 0 and to 0 beyond the margin.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import pdist, squareform

from config import EPSILON
from exceptions import DivergenceError, InvalidInputError, ShapeMismatchError
from homotopy_core import HomotopyPair, PairEvaluation, adaptive_weight, adaptive_weights

REDUCTIONS = ("sample", "pair_mean")


@dataclass(frozen=True)
class Margin:
    m: float

    def __post_init__(self):
        if not (math.isfinite(self.m) and self.m > 0):
            raise InvalidInputError(f"margin must be > 0, got {self.m}")


@dataclass(frozen=True)
class LossReport:
    ahcl: float
    mse: float
    total: float
    gamma: float


def _margin_value(m) -> float:
    return m.m if isinstance(m, Margin) else Margin(float(m)).m


def _check_embeddings(z: NDArray, min_rows: int = 1) -> NDArray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise InvalidInputError(f"embeddings must be a 2-D matrix, got shape {z.shape}")
    if z.shape[0] < min_rows or z.shape[1] < 1:
        raise InvalidInputError(f"embeddings need at least {min_rows} rows and 1 column, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("embeddings contain non-finite values")
    return z


def pairwise_distance(z: NDArray) -> NDArray:
    """Symmetric n x n Euclidean distance matrix with an exactly zero diagonal."""
    z = _check_embeddings(z)
    if z.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(z, metric="euclidean"))


def contrastive_fg(d: float, m) -> HomotopyPair:
    """Similar/dissimilar costs (d^2, max(m - d, 0)^2) of one pair."""
    margin = _margin_value(m)
    if not (math.isfinite(d) and d >= 0):
        raise InvalidInputError(f"distance must be >= 0, got {d}")
    return HomotopyPair(f=d * d, g=max(margin - d, 0.0) ** 2)


def contrastive_terms(distances: NDArray, m) -> Tuple[NDArray, NDArray]:
    margin = _margin_value(m)
    hinge = np.maximum(margin - distances, 0.0)
    return distances ** 2, hinge ** 2


def adaptive_label(d: float, m, epsilon: float = EPSILON) -> float:
    """Soft label of one pair: 0 beyond the margin, 1 at zero distance, g / (f + g) between."""
    margin = _margin_value(m)
    if not (math.isfinite(d) and d >= 0):
        raise InvalidInputError(f"distance must be >= 0, got {d}")
    if d >= margin:
        return 0.0
    if d <= epsilon:
        return 1.0
    return adaptive_weight(contrastive_fg(d, margin), epsilon)


def labels_from_distances(distances: NDArray, m, epsilon: float = EPSILON) -> NDArray:
    margin = _margin_value(m)
    f, g = contrastive_terms(distances, margin)
    y = adaptive_weights(f, g, epsilon)
    y[distances >= margin] = 0.0
    y[distances <= epsilon] = 1.0
    return y


def soft_labels(z: NDArray, m, epsilon: float = EPSILON) -> NDArray:
    """Deep graph representation: n x n adaptive labels of every pair of rows of z."""
    return labels_from_distances(pairwise_distance(z), m, epsilon)


def normalize_embeddings(h: NDArray, radius: float = 1.0) -> Tuple[NDArray, NDArray]:
    """
    Project rows onto the sphere of the given radius.

    Returns:
        tuple: (projected rows, row norms) - the norms are needed for the backward pass
    """
    if not (math.isfinite(radius) and radius > 0):
        raise InvalidInputError(f"radius must be > 0, got {radius}")
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return radius * h / safe[:, None], safe


def normalize_embeddings_backward(z: NDArray, norms: NDArray, grad_z: NDArray, radius: float = 1.0) -> NDArray:
    """Gradient through z = radius * h / ||h|| given the projected rows and the norms."""
    unit = z / radius
    radial = np.sum(grad_z * unit, axis=1, keepdims=True)
    return radius * (grad_z - unit * radial) / norms[:, None]


def _scale(n: int, reduction: str) -> float:
    if reduction == "sample":
        return 1.0 / (2.0 * n)
    if reduction == "pair_mean":
        return 1.0 / (n * n)
    raise InvalidInputError(f"unknown reduction {reduction!r}, expected one of {REDUCTIONS}")


def ahcl_loss(z: NDArray, m, epsilon: float = EPSILON, labels: Optional[NDArray] = None,
              reduction: str = "sample") -> Tuple[float, NDArray]:
    """
    AHCL loss and its exact gradient with the labels held constant.

    Args:
        z: n x k embeddings, n >= 2
        m: margin
        epsilon: zero-distance threshold
        labels: frozen n x n soft labels; computed from z when omitted
        reduction: "sample" divides the n^2-term double sum by 2n, "pair_mean" by n^2

    Returns:
        tuple: (loss, n x k gradient)
    """
    z = _check_embeddings(z, min_rows=2)
    margin = _margin_value(m)
    n = z.shape[0]
    scale = _scale(n, reduction)

    distances = pairwise_distance(z)
    y = labels_from_distances(distances, margin, epsilon) if labels is None else np.asarray(labels, dtype=np.float64)
    if y.shape != (n, n):
        raise ShapeMismatchError(f"labels must be {n}x{n}, got {y.shape}")

    hinge = np.maximum(margin - distances, 0.0)
    loss = scale * float(np.sum(y * distances ** 2 + (1.0 - y) * hinge ** 2))
    if not math.isfinite(loss):
        raise DivergenceError("non-finite AHCL loss")

    # dt/dz_i = w_ij (z_i - z_j) for every ordered pair term
    with np.errstate(divide="ignore", invalid="ignore"):
        pull = np.where(distances > epsilon, hinge / distances, 0.0)
    w = 2.0 * y - 2.0 * (1.0 - y) * pull
    w_sym = w + w.T
    grad = scale * (w_sym.sum(axis=1)[:, None] * z - w_sym @ z)
    return loss, grad


def mse_loss(x: NDArray, x_hat: NDArray) -> Tuple[float, NDArray]:
    """Reconstruction error (1/n) * sum (x - x_hat)^2 and its gradient with respect to x_hat."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatchError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {x.shape}")
    n = x.shape[0]
    diff = x_hat - x
    loss = float(np.sum(diff ** 2)) / n
    return loss, (2.0 / n) * diff


def total_loss(ahcl: float, mse: float, gamma: float) -> LossReport:
    if not gamma > 0:
        raise InvalidInputError(f"gamma must be > 0, got {gamma}")
    return LossReport(ahcl=ahcl, mse=mse, total=ahcl + gamma * mse, gamma=gamma)


def pair_objective(m, reduction: str = "sample"):
    """
    Pairwise AHCL costs in the `run_adaptive_homotopy` contract.

    Items are the ordered pairs (i, j); f and g are n x n matrices scaled by the
    reduction, and the vjp maps per-pair weights back onto the embedding rows.
    """
    margin = _margin_value(m)

    def evaluate(z: NDArray, data=None) -> PairEvaluation:
        z = _check_embeddings(z, min_rows=2)
        scale = _scale(z.shape[0], reduction)
        distances = pairwise_distance(z)
        f, g = contrastive_terms(distances, margin)
        hinge = np.sqrt(g)

        def vjp(wf: NDArray, wg: NDArray) -> NDArray:
            with np.errstate(divide="ignore", invalid="ignore"):
                pull = np.where(distances > 0, hinge / distances, 0.0)
            w = 2.0 * wf - 2.0 * wg * pull
            w_sym = w + w.T
            return scale * (w_sym.sum(axis=1)[:, None] * z - w_sym @ z)

        return PairEvaluation(f=scale * f, g=scale * g, vjp=vjp)

    return evaluate
