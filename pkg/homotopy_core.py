"""
Adaptive homotopy framework.

A homotopy objective mixes two non-negative costs f and g with a ratio y in [0, 1]:

    y * f + (1 - y) * g

Replacing (y, 1 - y) by the equivalent infinitesimals (-ln(1 - y), -ln y) makes the
objective differentiable in y, and its minimiser is the closed form y = g / (f + g).
The optimisation loop alternates that closed-form update with gradient steps on the
linear (decoupled) objective, holding y fixed.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, List, Protocol

import numpy as np
from numpy.typing import NDArray

from config import EPSILON
from exceptions import DivergenceError, InvalidInputError

logger = logging.getLogger(__name__)

AdaptiveWeight = float


@dataclass(frozen=True)
class HomotopyPair:
    """Costs of scenario S (f) and of its complement (g) at one point or pair."""

    f: float
    g: float

    def __post_init__(self):
        for name in ("f", "g"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidInputError(f"{name} must be finite, got {value}")
            if value < 0:
                raise InvalidInputError(f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class HomotopyConfig:
    epsilon: float = EPSILON
    max_iters: int = 100
    tol: float = 1e-9

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be > 0")
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")
        # max_iters == 0 is the documented no-op
        if self.max_iters < 0:
            raise InvalidInputError("max_iters must be >= 0")


def _check_epsilon(epsilon: float) -> None:
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise InvalidInputError(f"epsilon must be a positive finite number, got {epsilon}")


def adaptive_weight(pair: HomotopyPair, epsilon: float = EPSILON) -> AdaptiveWeight:
    """
    Closed-form adaptive weight with the piecewise limits.

    Args:
        pair: (f, g) costs
        epsilon: values <= epsilon count as the limit "-> 0"

    Returns:
        float: 0.5 if both vanish, 0 if g vanishes, 1 if f vanishes, else g / (f + g)
    """
    _check_epsilon(epsilon)
    f, g = pair.f, pair.g
    if g <= epsilon and f <= epsilon:
        return 0.5
    if g <= epsilon:
        return 0.0
    if f <= epsilon:
        return 1.0
    return g / (f + g)


def adaptive_weights(f: NDArray, g: NDArray, epsilon: float = EPSILON) -> NDArray:
    """Vectorised `adaptive_weight` over arrays of costs of any (matching) shape."""
    _check_epsilon(epsilon)
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape:
        raise InvalidInputError(f"f and g shapes differ: {f.shape} vs {g.shape}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise InvalidInputError("costs must be finite")
    if np.any(f < 0) or np.any(g < 0):
        raise InvalidInputError("costs must be >= 0")

    f_zero = f <= epsilon
    g_zero = g <= epsilon
    total = np.where(f_zero | g_zero, 1.0, f + g)
    y = np.where(f_zero | g_zero, 0.0, g / total)
    y = np.where(f_zero & ~g_zero, 1.0, y)
    y = np.where(f_zero & g_zero, 0.5, y)
    return y


def _check_weight(y: float, open_interval: bool = False) -> None:
    if not math.isfinite(y):
        raise InvalidInputError(f"y must be finite, got {y}")
    if open_interval and not 0.0 < y < 1.0:
        raise InvalidInputError(f"y must lie in (0, 1), got {y}")
    if not open_interval and not 0.0 <= y <= 1.0:
        raise InvalidInputError(f"y must lie in [0, 1], got {y}")


def decoupled_objective(y: AdaptiveWeight, pair: HomotopyPair) -> float:
    """Linear homotopy objective y * f + (1 - y) * g."""
    _check_weight(y)
    return y * pair.f + (1.0 - y) * pair.g


def maclaurin_dual_objective(y: float, pair: HomotopyPair) -> float:
    """Dual objective -ln(1 - y) * f - ln(y) * g, defined for y in (0, 1) only."""
    _check_weight(y, open_interval=True)
    return -math.log1p(-y) * pair.f - math.log(y) * pair.g


def maclaurin_partial_sum(y: float, n_terms: int) -> float:
    """
    Partial sum -sum_{k=1..n_terms} y^k / k of the series of ln(1 - y).

    Args:
        y: point in (0, 1)
        n_terms: number of terms, >= 1
    """
    _check_weight(y, open_interval=True)
    if n_terms < 1:
        raise InvalidInputError(f"n_terms must be >= 1, got {n_terms}")
    k = np.arange(1, n_terms + 1, dtype=np.float64)
    return float(-np.sum(np.power(y, k) / k))


def grid_argmin_weight(pair: HomotopyPair, step: float = 1e-3) -> float:
    """Minimise the dual objective over the grid {step, 2*step, ..., 1 - step}."""
    grid = np.arange(1, int(round(1.0 / step)), dtype=np.float64) * step
    values = -np.log1p(-grid) * pair.f - np.log(grid) * pair.g
    return float(grid[int(np.argmin(values))])


# ====== Alternating optimisation loop ======

@dataclass
class PairEvaluation:
    """
    Per-item costs and their gradients.

    `vjp(wf, wg)` returns the gradient of sum(wf * f) + sum(wg * g) with respect to the
    embedding, with wf and wg shaped like f and g.
    """

    f: NDArray
    g: NDArray
    vjp: Callable[[NDArray, NDArray], NDArray]


ObjectivePairFn = Callable[[NDArray, Any], PairEvaluation]


class Embedder(Protocol):
    def embed(self, data: Any) -> NDArray:
        ...

    def step(self, data: Any, grad_embedding: NDArray) -> None:
        ...


class FreeEmbedding:
    """Embedder whose parameters are the embedding itself, updated by plain gradient descent."""

    def __init__(self, initial: NDArray, lr: float = 0.1):
        if lr <= 0:
            raise InvalidInputError("lr must be > 0")
        self.z = np.array(initial, dtype=np.float64, copy=True)
        self.lr = lr

    def embed(self, data: Any) -> NDArray:
        return self.z.copy()

    def step(self, data: Any, grad_embedding: NDArray) -> None:
        self.z -= self.lr * grad_embedding


@dataclass
class HomotopyResult:
    embeddings: NDArray
    weights: NDArray
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iters(self) -> int:
        return len(self.objective_trace)


def homotopy_step(objective_pair_fn: ObjectivePairFn, z: NDArray, data: Any, epsilon: float = EPSILON):
    """
    One alternating step: evaluate the pairs, update the weights in closed form, and
    return the decoupled loss with its gradient taken at fixed weights.

    Returns:
        tuple: (loss, weights, grad_embedding)
    """
    evaluation = objective_pair_fn(z, data)
    # weights are constants for the gradient step
    y = adaptive_weights(evaluation.f, evaluation.g, epsilon)
    loss = float(np.sum(y * evaluation.f + (1.0 - y) * evaluation.g))
    if not math.isfinite(loss):
        raise DivergenceError("non-finite homotopy objective")
    grad = evaluation.vjp(y, 1.0 - y)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite homotopy gradient")
    return loss, y, grad


def run_adaptive_homotopy(objective_pair_fn: ObjectivePairFn, model: Embedder, data: Any,
                          config: HomotopyConfig) -> HomotopyResult:
    """
    Alternate closed-form weight updates and gradient steps until the relative change
    of the objective drops below `config.tol` or `config.max_iters` is reached.

    Args:
        objective_pair_fn: maps (embedding, data) to a PairEvaluation
        model: differentiable embedder
        data: passed through to the model and the objective
        config: thresholds and iteration bound

    Returns:
        HomotopyResult: final embeddings, per-item weights and the objective trace
    """
    trace: List[float] = []
    converged = False
    previous = None

    for iteration in range(config.max_iters):
        z = model.embed(data)
        try:
            loss, _, grad = homotopy_step(objective_pair_fn, z, data, config.epsilon)
        except DivergenceError as e:
            raise DivergenceError(str(e), epoch=iteration) from None
        trace.append(loss)
        logger.debug(f"iteration {iteration}: objective={loss:.6g}")

        if previous is not None and abs(loss - previous) <= config.tol * max(abs(previous), 1e-300):
            converged = True
            break
        previous = loss
        model.step(data, grad)

    z = model.embed(data)
    evaluation = objective_pair_fn(z, data)
    weights = adaptive_weights(evaluation.f, evaluation.g, config.epsilon)
    logger.info(f"🔁 adaptive homotopy finished after {len(trace)} iterations (converged={converged})")
    return HomotopyResult(embeddings=z, weights=weights, objective_trace=trace, converged=converged)
