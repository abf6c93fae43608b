"""
Deep graph representation and clustering: affinity graphs, the symmetric normalized
Laplacian, spectral clustering and k-means (k-means++ seeding, Lloyd iterations).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, eigh
from scipy.spatial.distance import cdist, pdist, squareform

from config import EPSILON, KMEANS_MAX_ITERS, KMEANS_RESTARTS, MARGIN
from contrastive import soft_labels
from exceptions import EigenSolverError, InvalidInputError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class AffinityGraph:
    """Weighted graph over samples: symmetric, unit diagonal, weights in [0, 1]."""

    y: NDArray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 2 or self.y.shape[0] != self.y.shape[1] or self.y.shape[0] == 0:
            raise InvalidInputError(f"affinity matrix must be square and non-empty, got {self.y.shape}")
        if not np.all(np.isfinite(self.y)):
            raise InvalidInputError("affinity matrix contains non-finite values")
        if np.any(self.y < 0) or np.any(self.y > 1):
            raise InvalidInputError("affinity entries must lie in [0, 1]")
        if not np.allclose(self.y, self.y.T, rtol=0, atol=1e-12):
            raise InvalidInputError("affinity matrix must be symmetric")
        if not np.allclose(np.diag(self.y), 1.0, rtol=0, atol=1e-12):
            raise InvalidInputError("affinity matrix must have a unit diagonal")

    @property
    def n(self) -> int:
        return self.y.shape[0]


def affinity_from_embeddings(z: NDArray, m, epsilon: float = EPSILON) -> AffinityGraph:
    return AffinityGraph(soft_labels(z, m, epsilon))


def gaussian_affinity(z: NDArray, sigma: Optional[float] = None) -> AffinityGraph:
    """
    Gaussian kernel exp(-d^2 / (2 sigma^2)) over rows of z.

    Args:
        z: n x k features
        sigma: bandwidth; defaults to the median non-zero pairwise distance
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] == 1:
        return AffinityGraph(np.ones((1, 1)))
    condensed = pdist(z, metric="sqeuclidean")
    if sigma is None:
        positive = np.sqrt(condensed[condensed > 0])
        sigma = float(np.median(positive)) if positive.size else 1.0
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be > 0, got {sigma}")
    y = squareform(np.exp(-condensed / (2.0 * sigma * sigma)))
    np.fill_diagonal(y, 1.0)
    return AffinityGraph(y)


def normalized_laplacian(graph: AffinityGraph) -> NDArray:
    """L_sym = I - D^(-1/2) Y D^(-1/2); self-loops count towards the degrees."""
    degree = graph.y.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    laplacian = np.eye(graph.n) - inv_sqrt[:, None] * graph.y * inv_sqrt[None, :]
    return 0.5 * (laplacian + laplacian.T)


def symmetric_eigh(matrix: NDArray) -> Tuple[NDArray, NDArray]:
    """
    Dense symmetric eigendecomposition (LAPACK tridiagonal QL/QR), ascending eigenvalues.

    Raises:
        EigenSolverError: when LAPACK does not converge
    """
    try:
        return eigh(matrix, driver="ev", check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise EigenSolverError(f"eigensolver failed: {e}") from e


def spectral_embedding(graph: AffinityGraph, k: int) -> NDArray:
    """Row-normalised eigenvectors of the k smallest Laplacian eigenvalues."""
    _, vectors = symmetric_eigh(normalized_laplacian(graph))
    u = vectors[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)


def spectral_clustering(graph: AffinityGraph, k: int, seed: int = 0,
                        n_init: int = KMEANS_RESTARTS) -> NDArray:
    """
    Args:
        graph: affinity graph
        k: number of clusters, 1 <= k <= n
        seed: seed of the k-means stage

    Returns:
        NDArray: integer labels in [0, k)
    """
    _check_k(k, graph.n)
    if k == 1:
        return np.zeros(graph.n, dtype=np.int64)
    return kmeans(spectral_embedding(graph, k), k, seed=seed, n_init=n_init)


# ====== k-means ======

@dataclass
class KMeansFit:
    labels: NDArray
    centers: NDArray
    inertia: float
    n_iter: int
    inertia_trace: List[float] = field(default_factory=list)


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if k > n:
        raise InvalidInputError(f"k={k} exceeds the number of points n={n}")


def _assign(points: NDArray, centers: NDArray) -> Tuple[NDArray, NDArray]:
    # argmin keeps the lowest centroid index on ties
    sq = cdist(points, centers, metric="sqeuclidean")
    labels = np.argmin(sq, axis=1)
    return labels, sq[np.arange(points.shape[0]), labels]


def kmeans_plus_plus(points: NDArray, k: int, rng: np.random.Generator) -> NDArray:
    """D^2-weighted seeding."""
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = cdist(points, centers[0][None, :], metric="sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = rng.choice(n, p=closest / total)
        else:
            index = rng.integers(n)
        centers.append(points[index])
        closest = np.minimum(closest, cdist(points, points[index][None, :], metric="sqeuclidean")[:, 0])
    return np.array(centers)


def lloyd(points: NDArray, centers: NDArray, max_iters: int = KMEANS_MAX_ITERS) -> KMeansFit:
    """
    Lloyd iterations from the given centers until no assignment changes.

    Empty clusters are re-seeded at the point farthest from its current centroid.
    """
    centers = np.array(centers, dtype=np.float64, copy=True)
    k = centers.shape[0]
    labels, sq = _assign(points, centers)
    trace = [float(sq.sum())]
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        for cluster in range(k):
            members = labels == cluster
            if np.any(members):
                centers[cluster] = points[members].mean(axis=0)
            else:
                farthest = int(np.argmax(sq))
                centers[cluster] = points[farthest]
                sq[farthest] = 0.0
        new_labels, sq = _assign(points, centers)
        trace.append(float(sq.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansFit(labels=labels, centers=centers, inertia=trace[-1], n_iter=n_iter, inertia_trace=trace)


def kmeans_fit(points: NDArray, k: int, seed: int = 0, max_iters: int = KMEANS_MAX_ITERS,
               n_init: int = KMEANS_RESTARTS) -> KMeansFit:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InvalidInputError(f"points must be a 2-D matrix, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("points contain non-finite values")
    _check_k(k, points.shape[0])
    if n_init < 1:
        raise InvalidInputError("n_init must be >= 1")

    rng = np.random.default_rng(seed)
    best: Optional[KMeansFit] = None
    for _ in range(n_init):
        fit = lloyd(points, kmeans_plus_plus(points, k, rng), max_iters)
        if best is None or fit.inertia < best.inertia:
            best = fit
    return best


def kmeans(points: NDArray, k: int, seed: int = 0, max_iters: int = KMEANS_MAX_ITERS,
           n_init: int = KMEANS_RESTARTS) -> NDArray:
    """Best-of-`n_init` k-means++/Lloyd labels; deterministic given the seed."""
    return kmeans_fit(points, k, seed=seed, max_iters=max_iters, n_init=n_init).labels


# ====== clustering arms ======

CLUSTER_METHODS = ("sc-y", "sc-z", "km-z")


def cluster(method: str, k: int, seed: int = 0, features: Optional[NDArray] = None,
            affinity: Optional[AffinityGraph] = None, margin=MARGIN, epsilon: float = EPSILON,
            n_init: int = KMEANS_RESTARTS) -> NDArray:
    """
    Run one clustering arm.

    Args:
        method: "km-z" (k-means on features), "sc-z" (spectral on a Gaussian affinity of
            the features) or "sc-y" (spectral on the soft-label graph)
        k: number of clusters
        features: n x k embeddings (or raw features); required by km-z and sc-z, and by
            sc-y when no affinity is given
        affinity: precomputed soft-label graph for sc-y

    Returns:
        NDArray: integer labels in [0, k)
    """
    if method not in CLUSTER_METHODS:
        raise UsageError(f"unknown clustering method {method!r}, expected one of {CLUSTER_METHODS}")
    if method == "sc-y":
        if affinity is None:
            if features is None:
                raise UsageError("sc-y needs an affinity matrix or embeddings")
            affinity = affinity_from_embeddings(features, margin, epsilon)
        logger.debug(f"sc-y on n={affinity.n}, k={k}")
        return spectral_clustering(affinity, k, seed=seed, n_init=n_init)
    if features is None:
        raise UsageError(f"{method} needs features or embeddings")
    if method == "sc-z":
        return spectral_clustering(gaussian_affinity(features), k, seed=seed, n_init=n_init)
    return kmeans(features, k, seed=seed, n_init=n_init)
