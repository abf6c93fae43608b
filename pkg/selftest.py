"""
Embedded verification suite behind `run.py selftest`.

Each check is a function returning (passed, detail); `run_selftest` times them and
collects a report. A failing check is named in the report and makes the command exit
non-zero.
"""
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize_scalar

from config import RunConfig
from contrastive import normalize_embeddings, soft_labels
from evaluation import clustering_accuracy, hungarian
from graph import AffinityGraph, normalized_laplacian, spectral_clustering, symmetric_eigh
from homotopy_core import (HomotopyPair, adaptive_weight, grid_argmin_weight, maclaurin_dual_objective,
                           maclaurin_partial_sum)
from nn_model import build_autoencoder, forward
from trainer import batch_objective

logger = logging.getLogger(__name__)

CheckOutcome = Tuple[bool, str]
GradientHook = Callable[[NDArray], NDArray]

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4
MACLAURIN_ULPS = 32


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SelfTestReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            mark = "PASS" if r.passed else "FAIL"
            lines.append(f"[{mark}] {r.name} ({r.seconds:.2f}s): {r.detail}")
        verdict = "all checks passed" if self.passed else f"failed: {', '.join(self.failures)}"
        lines.append(verdict)
        return "\n".join(lines)


def check_adaptive_weight_argmin(rng: np.random.Generator, cases: int = 1000) -> CheckOutcome:
    """Grid minimiser of the dual objective sits within one grid step of g / (f + g)."""
    worst = 0.0
    for _ in range(cases):
        f, g = rng.uniform(0.01, 10.0, size=2)
        pair = HomotopyPair(float(f), float(g))
        worst = max(worst, abs(grid_argmin_weight(pair, 1e-3) - adaptive_weight(pair)))
    # a continuous minimiser on a subset as a second opinion
    for _ in range(min(cases, 50)):
        f, g = rng.uniform(0.01, 10.0, size=2)
        pair = HomotopyPair(float(f), float(g))
        found = minimize_scalar(lambda y: maclaurin_dual_objective(y, pair), bounds=(1e-9, 1 - 1e-9),
                                method="bounded", options={"xatol": 1e-10})
        worst = max(worst, abs(found.x - adaptive_weight(pair)) if found.success else math.inf)
    return worst <= 1e-3, f"max |argmin - g/(f+g)| = {worst:.2e}"


def _parameter_views(model) -> List[NDArray]:
    views = []
    for mlp in (model.encoder, model.decoder):
        for layer in mlp.layers:
            views.extend((layer.weight, layer.bias))
    return views


def _relu_pattern(model, x: NDArray) -> List[NDArray]:
    h, encoder_cache = forward(model.encoder, x)
    z = normalize_embeddings(h, model.radius)[0] if model.normalize else h
    _, decoder_cache = forward(model.decoder, z)
    pattern = []
    for mlp, cache in ((model.encoder, encoder_cache), (model.decoder, decoder_cache)):
        pattern.extend(a > 0 for layer, a in zip(mlp.layers, cache.pre_activations) if layer.activation == "relu")
    return pattern


def max_gradient_error(model, x: NDArray, config: RunConfig, rng: np.random.Generator, samples: int = 6,
                       perturb: Optional[GradientHook] = None) -> Tuple[float, int]:
    """
    Largest relative error between the analytic batch gradient and central differences
    on `samples` random entries of every parameter array.

    Entries whose +-h step flips a relu are skipped since the loss is not differentiable there.

    Returns:
        tuple: (max relative error, number of skipped entries)
    """
    base = batch_objective(model, x, config)
    labels = base.labels
    analytic = [g for pair in base.encoder_grads + base.decoder_grads for g in pair]
    if perturb is not None:
        analytic = [perturb(g) for g in analytic]
    reference = _relu_pattern(model, x)

    worst, skipped = 0.0, 0
    for param, grad in zip(_parameter_views(model), analytic):
        for flat in rng.choice(param.size, size=min(samples, param.size), replace=False):
            index = np.unravel_index(flat, param.shape)
            original = param[index]
            values, kinked = [], False
            for shift in (FD_STEP, -FD_STEP):
                param[index] = original + shift
                kinked |= any(not np.array_equal(a, b) for a, b in zip(reference, _relu_pattern(model, x)))
                values.append(batch_objective(model, x, config, labels=labels).report.total)
            param[index] = original
            if kinked:
                skipped += 1
                continue
            numeric = (values[0] - values[1]) / (2 * FD_STEP)
            error = abs(grad[index] - numeric) / max(abs(grad[index]), abs(numeric), 1e-6)
            worst = max(worst, error)
    return worst, skipped


def check_gradients(rng: np.random.Generator, instances: int = 20, samples: int = 6,
                    perturb: Optional[GradientHook] = None) -> CheckOutcome:
    """
    Analytic gradient of ahcl + gamma * mse (labels frozen) against central differences
    on random small networks.

    Args:
        perturb: applied to every analytic gradient before the comparison; a negative control
    """
    worst, skipped = 0.0, 0
    for _ in range(instances):
        n = int(rng.integers(2, 9))
        p = int(rng.integers(2, 17))
        k = int(rng.integers(2, 9))
        hidden = (int(rng.integers(2, 17)),)
        config = RunConfig(margin=float(rng.uniform(0.3, 1.0)), gamma=float(rng.uniform(0.01, 1.0)),
                           embed_dim=k, encoder_hidden=hidden)
        model = build_autoencoder(p, k, hidden, seed=int(rng.integers(2 ** 31)),
                                  normalize=bool(rng.integers(2)), radius=float(rng.uniform(0.2, 1.0)))
        x = rng.uniform(0.0, 1.0, size=(n, p))
        error, kinks = max_gradient_error(model, x, config, rng, samples, perturb)
        worst = max(worst, error)
        skipped += kinks
    return worst <= FD_TOLERANCE, (f"max relative error {worst:.2e} over {instances} random networks"
                                   f" ({skipped} entries on a relu kink skipped)")


def _brute_force_accuracy(true: NDArray, pred: NDArray) -> float:
    size = int(max(true.max(), pred.max())) + 1
    best = 0
    for perm in itertools.permutations(range(size)):
        best = max(best, int(np.sum(true == np.asarray(perm)[pred])))
    return best / true.size


def check_hungarian(rng: np.random.Generator, cases: int = 200) -> CheckOutcome:
    """ACC and raw assignments against enumeration of every bijection."""
    mismatches = 0
    for _ in range(cases):
        k = int(rng.integers(1, 7))
        n = int(rng.integers(1, 13))
        true = rng.integers(0, k, size=n)
        pred = rng.integers(0, k, size=n)
        if clustering_accuracy(true, pred) != _brute_force_accuracy(true, pred):
            mismatches += 1

        cost = rng.normal(size=(k, k))
        perm = hungarian(cost)
        best = min(cost[np.arange(k), list(p)].sum() for p in itertools.permutations(range(k)))
        if not math.isclose(cost[np.arange(k), perm].sum(), best, rel_tol=0, abs_tol=1e-9):
            mismatches += 1
    return mismatches == 0, f"{mismatches} mismatches in {cases} cases"


def check_maclaurin(rng: np.random.Generator) -> CheckOutcome:
    """
    Partial sums of the ln(1 - y) series converge and decrease monotonically.

    Strict decrease is only required while the next term is larger than the rounding
    noise of the running sum; past that the sums may plateau.
    """
    error = abs(maclaurin_partial_sum(0.5, 200) - math.log(0.5))
    monotone = True
    for y in (0.1, 0.5, 0.9, float(rng.uniform(0.01, 0.99))):
        sums = [maclaurin_partial_sum(y, n) for n in range(1, 60)]
        for n, (a, b) in enumerate(zip(sums, sums[1:]), start=1):
            noise = MACLAURIN_ULPS * np.spacing(abs(a))
            term = y ** (n + 1) / (n + 1)
            monotone &= bool(b < a) if term > noise else bool(b <= a + noise)
    return error < 1e-9 and monotone, f"|S_200(0.5) - ln 0.5| = {error:.2e}, monotone={monotone}"


def _block_affinity(sizes: Sequence[int]) -> NDArray:
    n = sum(sizes)
    y = np.zeros((n, n))
    start = 0
    for size in sizes:
        y[start:start + size, start:start + size] = 1.0
        start += size
    return y


def check_laplacian(rng: np.random.Generator, cases: int = 20) -> CheckOutcome:
    """Spectrum in [0, 2], exact reconstruction, and block structure recovered."""
    problems = []
    for _ in range(cases):
        n = int(rng.integers(2, 60))
        z = rng.normal(scale=0.5, size=(n, int(rng.integers(1, 6))))
        laplacian = normalized_laplacian(AffinityGraph(soft_labels(z, 0.75)))
        values, vectors = symmetric_eigh(laplacian)
        if values.min() < -1e-8 or values.max() > 2 + 1e-8:
            problems.append(f"eigenvalues outside [0, 2]: [{values.min():.3g}, {values.max():.3g}]")
        rebuilt = (vectors * values) @ vectors.T
        if np.linalg.norm(rebuilt - laplacian) > 1e-8 * max(np.linalg.norm(laplacian), 1.0):
            problems.append("eigendecomposition does not reconstruct L")

    sizes = [int(s) for s in rng.integers(2, 8, size=int(rng.integers(2, 5)))]
    truth = np.repeat(np.arange(len(sizes)), sizes)
    order = rng.permutation(truth.size)
    graph = AffinityGraph(_block_affinity(sizes)[np.ix_(order, order)])
    values, _ = symmetric_eigh(normalized_laplacian(graph))
    zeros = int(np.sum(np.abs(values) < 1e-6))
    if zeros != len(sizes):
        problems.append(f"{len(sizes)} blocks but {zeros} zero eigenvalues")
    acc = clustering_accuracy(truth[order], spectral_clustering(graph, len(sizes), seed=0))
    if acc != 1.0:
        problems.append(f"block recovery ACC {acc:.3f}")
    return not problems, "; ".join(problems) or f"{cases} random graphs and a {len(sizes)}-block graph"


CHECKS: Dict[str, Callable[..., CheckOutcome]] = {
    "adaptive_weight_argmin": check_adaptive_weight_argmin,
    "gradient_finite_difference": check_gradients,
    "hungarian_brute_force": check_hungarian,
    "maclaurin_convergence": check_maclaurin,
    "laplacian_spectrum": check_laplacian,
}


def run_selftest(names: Optional[Sequence[str]] = None, seed: int = 0,
                 gradient_perturbation: Optional[GradientHook] = None) -> SelfTestReport:
    """
    Args:
        names: subset of CHECKS to run, all by default
        seed: seed of the random instances
        gradient_perturbation: hook forwarded to the gradient check

    Returns:
        SelfTestReport: one result per check; a check that raises counts as failed
    """
    report = SelfTestReport()
    for name in names or CHECKS:
        check = CHECKS[name]
        rng = np.random.default_rng(seed)
        started = time.perf_counter()
        try:
            if name == "gradient_finite_difference":
                passed, detail = check(rng, perturb=gradient_perturbation)
            else:
                passed, detail = check(rng)
        except Exception as e:
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        result = CheckResult(name, bool(passed), detail, time.perf_counter() - started)
        report.results.append(result)
        log = logger.info if result.passed else logger.error
        log(f"{'✅' if result.passed else '❌'} {name}: {detail}")
    return report
