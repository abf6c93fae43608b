"""
AHCL trainer: learns the encoder/decoder pair and the deep graph representation.

Each batch step: encode -> soft labels (held constant) -> AHCL gradient -> decode ->
MSE gradient -> backpropagate both through decoder and encoder -> Adam.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from numpy.typing import NDArray

from config import RunConfig
from contrastive import (LossReport, ahcl_loss, mse_loss, normalize_embeddings,
                         normalize_embeddings_backward, soft_labels, total_loss)
from datasets import Dataset, sample_batches
from evaluation import evaluate
from exceptions import DivergenceError, InvalidInputError
from graph import AffinityGraph, spectral_clustering
from nn_model import (AutoEncoder, LayerGrad, adam_step, backward, build_autoencoder, center_encoder_output, forward,
                      lr_schedule)


@dataclass
class EpochRecord:
    epoch: int
    ahcl: float
    mse: float
    total: float
    lr: float
    wall_time: float
    acc: Optional[float] = None
    nmi: Optional[float] = None
    radius: Optional[float] = None


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(f"epochs must increase strictly: {record.epoch} after {self.records[-1].epoch}")
        if not all(math.isfinite(v) for v in (record.ahcl, record.mse, record.total)):
            raise DivergenceError("non-finite loss in trace", epoch=record.epoch)
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def totals(self) -> List[float]:
        return [r.total for r in self.records]

    def to_records(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.records]

    def loss_columns(self) -> List[tuple]:
        """Everything except wall time; this is what seeded runs reproduce bit for bit."""
        return [(r.epoch, r.ahcl, r.mse, r.total, r.lr) for r in self.records]


def radius_schedule(start: float, final: float, epoch: int, warmup: int) -> float:
    """Linear growth from start (epoch 1) to final (epoch warmup + 1 and later); warmup 0 gives final."""
    if not (0 < start <= final) or warmup < 0 or epoch < 1:
        raise InvalidInputError("radius_schedule needs 0 < start <= final, warmup >= 0 and epoch >= 1")
    if warmup == 0:
        return final
    return start + (final - start) * min(1.0, (epoch - 1) / warmup)


@dataclass
class BatchResult:
    report: LossReport
    encoder_grads: List[LayerGrad]
    decoder_grads: List[LayerGrad]
    labels: Optional[NDArray]


def batch_objective(model: AutoEncoder, x: NDArray, config: RunConfig,
                    labels: Optional[NDArray] = None) -> BatchResult:
    """
    Loss report and parameter gradients for one batch.

    Args:
        model: encoder/decoder pair
        x: batch rows
        config: margin, gamma, epsilon, loss mode and reduction
        labels: frozen soft labels; computed from the current embeddings when omitted

    Returns:
        BatchResult: in "ahcl" mode total = ahcl + gamma * mse; in "mse" mode only the
        reconstruction is optimised (total = mse) and ahcl is reported for monitoring
    """
    h, encoder_cache = forward(model.encoder, x)
    if model.normalize:
        z, norms = normalize_embeddings(h, model.radius)
    else:
        z, norms = h, None

    y = soft_labels(z, config.margin, config.epsilon) if labels is None else labels
    ahcl, grad_z = ahcl_loss(z, config.margin, config.epsilon, labels=y, reduction=config.loss_reduction)

    x_hat, decoder_cache = forward(model.decoder, z)
    mse, grad_x_hat = mse_loss(x, x_hat)

    if config.loss == "ahcl":
        report = total_loss(ahcl, mse, config.gamma)
        recon_weight = config.gamma
    else:
        report = LossReport(ahcl=ahcl, mse=mse, total=mse, gamma=1.0)
        recon_weight = 1.0
        grad_z = np.zeros_like(z)

    decoder_grads, grad_z_recon = backward(model.decoder, decoder_cache, recon_weight * grad_x_hat)
    grad_z = grad_z + grad_z_recon
    if norms is not None:
        grad_z = normalize_embeddings_backward(z, norms, grad_z, model.radius)
    encoder_grads, _ = backward(model.encoder, encoder_cache, grad_z)
    return BatchResult(report=report, encoder_grads=encoder_grads, decoder_grads=decoder_grads, labels=y)


@dataclass
class TrainResult:
    model: AutoEncoder
    trace: TrainTrace
    stopped_early: bool = False


class AHCLTrainer:
    """
    Runs the training loop for one RunConfig
    Keeps simple run statistics like the number of optimizer steps
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.logger = logging.getLogger("AHCLTrainer")
        self.stats = {
            "epochs_run": 0,
            "steps": 0,
            "pairs_seen": 0,
            "best_total": None,
            "wall_time": 0.0,
        }

    def build_model(self, input_dim: int, x: Optional[NDArray] = None) -> AutoEncoder:
        """Fresh model from the config seed; with x the encoder output is centred on that data."""
        model = build_autoencoder(input_dim, self.config.embed_dim, self.config.encoder_hidden,
                                  self.config.seed, self.config.normalize_embeddings, self.config.embed_radius)
        if x is not None:
            center_encoder_output(model, x)
        return model

    def _monitor(self, model: AutoEncoder, x: NDArray, truth: NDArray):
        z = model.encode(x)
        k = int(np.unique(truth).size)
        graph = AffinityGraph(soft_labels(z, self.config.margin, self.config.epsilon))
        pred = spectral_clustering(graph, min(k, graph.n), seed=self.config.seed)
        return evaluate(truth, pred)

    def train(self, dataset: Dataset, model: Optional[AutoEncoder] = None) -> TrainResult:
        """
        Args:
            dataset: preprocessed features (and optional labels for monitoring)
            model: warm start; a fresh model is built from the config seed otherwise

        Returns:
            TrainResult: trained model and per-epoch trace

        Raises:
            DivergenceError: non-finite loss or exploding parameters, with the epoch
            InvalidInputError: fewer than two samples to pair up
        """
        config = self.config
        # the radius warm-up only applies to a freshly initialised encoder
        warmup = config.radius_warmup if model is None else 0
        model = model or self.build_model(dataset.dim, dataset.x)
        if model.encoder_state is None or model.decoder_state is None:
            model.init_optimizers(config.lr)
        trace = TrainTrace()

        if config.epochs == 0:
            self.logger.info("⏭️ epochs=0, returning the initial model")
            return TrainResult(model=model, trace=trace)

        batch_size = config.batch_size
        if batch_size > dataset.n:
            self.logger.warning(f"⚠️ batch_size {batch_size} > n={dataset.n}, using the full dataset per batch")
            batch_size = dataset.n
        if batch_size < 2:
            raise InvalidInputError(f"AHCL needs at least two samples per batch, got n={dataset.n}")

        rng = np.random.default_rng(config.seed)
        monitor = config.eval_every > 0 and dataset.labels is not None
        previous_total = None
        stopped_early = False
        self.logger.info(f"🚀 training on {dataset.name}: n={dataset.n}, p={dataset.dim}, "
                         f"epochs={config.epochs}, batch={batch_size}x{config.batches_per_epoch}, loss={config.loss}")

        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            lr = lr_schedule(config.lr, epoch - 1, config.decay_every, config.decay_factor)
            model.encoder_state.lr = lr
            model.decoder_state.lr = lr
            model.radius = radius_schedule(config.embed_radius_start, config.embed_radius, epoch, warmup)

            sums = np.zeros(3)
            batches = sample_batches(dataset.n, batch_size, config.batches_per_epoch, rng)
            for batch in batches:
                result = batch_objective(model, dataset.x[batch.indices], config)
                report = result.report
                if not all(math.isfinite(v) for v in (report.ahcl, report.mse, report.total)):
                    raise DivergenceError("non-finite loss", epoch=epoch)
                try:
                    adam_step(model.encoder, result.encoder_grads, model.encoder_state)
                    adam_step(model.decoder, result.decoder_grads, model.decoder_state)
                except DivergenceError as e:
                    raise DivergenceError(str(e), epoch=epoch) from None
                sums += (report.ahcl, report.mse, report.total)
                self.stats["steps"] += 1
                self.stats["pairs_seen"] += batch.n_pairs

            means = sums / len(batches)
            record = EpochRecord(epoch=epoch, ahcl=float(means[0]), mse=float(means[1]), total=float(means[2]),
                                 lr=lr, wall_time=time.perf_counter() - started,
                                 radius=model.radius if model.normalize else None)
            if monitor and epoch % config.eval_every == 0:
                metrics = self._monitor(model, dataset.x, dataset.labels)
                record.acc, record.nmi = metrics.acc, metrics.nmi
            trace.append(record)

            self.stats["epochs_run"] = epoch
            self.stats["wall_time"] += record.wall_time
            best = self.stats["best_total"]
            self.stats["best_total"] = record.total if best is None else min(best, record.total)
            self.logger.info(f"📉 epoch {epoch}: ahcl={record.ahcl:.6f} mse={record.mse:.6f} "
                             f"total={record.total:.6f} lr={lr:.2e}"
                             + (f" acc={record.acc:.4f} nmi={record.nmi:.4f}" if record.acc is not None else ""))

            if config.tol > 0 and previous_total is not None:
                if abs(record.total - previous_total) <= config.tol * max(abs(previous_total), 1e-300):
                    self.logger.info(f"✅ relative loss change below tol={config.tol:g}, stopping at epoch {epoch}")
                    stopped_early = True
                    break
            previous_total = record.total

        return TrainResult(model=model, trace=trace, stopped_early=stopped_early)

    def print_stats(self) -> None:
        self.logger.info(f"📊 epochs={self.stats['epochs_run']} steps={self.stats['steps']} "
                         f"pairs={self.stats['pairs_seen']} best_total={self.stats['best_total']} "
                         f"time={self.stats['wall_time']:.1f}s")
