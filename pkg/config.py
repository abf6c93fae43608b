"""
Defaults, run configuration and logging setup
"""
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from exceptions import UsageError

load_dotenv()

# ====== Loss ======
MARGIN = 0.75            # 0.7 ~ 0.8 works well on image data
GAMMA = 0.01             # 0.001 ~ 0.01
EPSILON = 1e-12          # threshold for the "f -> 0" / "g -> 0" limits
LOSS = "ahcl"            # ahcl | mse (reconstruction-only baseline)
LOSS_REDUCTION = "sample"  # sample: 1/(2n) | pair_mean: 1/n^2

# ====== Optimizer ======
LEARNING_RATE = 1e-3
DECAY_EVERY = 50
DECAY_FACTOR = 0.5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PARAM_LIMIT = 1e8

# ====== Training loop ======
EPOCHS = 150
BATCH_SIZE = 2000
BATCHES_PER_EPOCH = 20
TOL = 0.0                # 0 disables the relative-loss-change early stop
EVAL_EVERY = 0
SEED = 0

# ====== Network ======
EMBED_DIM = 128
ENCODER_HIDDEN = (256, 128)
NORMALIZE_EMBEDDINGS = True
EMBED_RADIUS = 0.5        # below margin / sqrt(2) not every pair can sit past the margin
EMBED_RADIUS_START = 0.28
RADIUS_WARMUP = 50        # epochs to grow the radius from start to final, 0 uses the final radius throughout

# ====== Clustering ======
KMEANS_RESTARTS = 10
KMEANS_MAX_ITERS = 300

# ====== Paths / logging ======
LOG_LEVEL = os.getenv("AHCL_LOG_LEVEL", "INFO")
LOG_DIR = os.getenv("AHCL_LOG_DIR", "logs")
RUNS_DIR = os.getenv("AHCL_RUNS_DIR", "runs")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

_LOSSES = ("ahcl", "mse")
_REDUCTIONS = ("sample", "pair_mean")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    """Hyper-parameters of one training run."""

    margin: float = MARGIN
    gamma: float = GAMMA
    lr: float = LEARNING_RATE
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    batches_per_epoch: int = BATCHES_PER_EPOCH
    embed_dim: int = EMBED_DIM
    encoder_hidden: Tuple[int, ...] = field(default_factory=lambda: tuple(ENCODER_HIDDEN))
    normalize_embeddings: bool = NORMALIZE_EMBEDDINGS
    embed_radius: float = EMBED_RADIUS
    embed_radius_start: float = EMBED_RADIUS_START
    radius_warmup: int = RADIUS_WARMUP
    seed: int = SEED
    decay_every: int = DECAY_EVERY
    decay_factor: float = DECAY_FACTOR
    epsilon: float = EPSILON
    tol: float = TOL
    loss: str = LOSS
    loss_reduction: str = LOSS_REDUCTION
    eval_every: int = EVAL_EVERY

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (0 < self.margin <= 1, "margin must be in (0, 1]"),
            (0 < self.gamma <= 1, "gamma must be in (0, 1]"),
            (self.lr > 0, "lr must be > 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.batches_per_epoch >= 1, "batches_per_epoch must be >= 1"),
            (self.embed_dim >= 1, "embed_dim must be >= 1"),
            (all(h >= 1 for h in self.encoder_hidden), "hidden sizes must be >= 1"),
            (self.decay_every >= 1, "decay_every must be >= 1"),
            (0 < self.decay_factor <= 1, "decay_factor must be in (0, 1]"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (self.tol >= 0, "tol must be >= 0"),
            (self.loss in _LOSSES, f"loss must be one of {_LOSSES}"),
            (self.loss_reduction in _REDUCTIONS, f"loss_reduction must be one of {_REDUCTIONS}"),
            (self.eval_every >= 0, "eval_every must be >= 0"),
            (self.embed_radius > 0, "embed_radius must be > 0"),
            (0 < self.embed_radius_start <= self.embed_radius, "embed_radius_start must be in (0, embed_radius]"),
            (self.radius_warmup >= 0, "radius_warmup must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise UsageError(message)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["encoder_hidden"] = list(self.encoder_hidden)
        return data


def _parse_value(name: str, raw: Any, default: Any) -> Any:
    """Convert a text value from a config file to the type of the field default."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"config key {name!r}: cannot parse {raw!r}") from None
    return text


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig: flags override the config file, which overrides defaults.

    Args:
        path: flat key=value file, optional
        overrides: values from the command line; None entries are ignored

    Returns:
        RunConfig: validated configuration
    """
    defaults = RunConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(RunConfig)}
    values: Dict[str, Any] = {}

    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise UsageError(f"config file not found: {path}")
        for key, raw in dotenv_values(config_path).items():
            name = key.strip().lower()
            if name not in known:
                raise UsageError(f"unknown config key: {key}")
            if raw is None:
                raise UsageError(f"config key {key!r} has no value")
            values[name] = _parse_value(name, raw, known[name])

    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name not in known:
            raise UsageError(f"unknown config key: {name}")
        values[name] = _parse_value(name, value, known[name])

    return RunConfig(**values)


def setup_logging(log_level: str = LOG_LEVEL, log_dir: Optional[str] = LOG_DIR) -> logging.Logger:
    """
    Configure console (stderr) and dated file logging.

    Args:
        log_level: DEBUG | INFO | WARNING | ERROR
        log_dir: directory for the log file; None logs to the console only
    """
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_dir:
        logs_dir = Path(log_dir)
        logs_dir.mkdir(parents=True, exist_ok=True)
        log_file = logs_dir / f"ahcl_{datetime.now().strftime('%Y%m%d')}.log"
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, str(log_level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    return logging.getLogger("ahcl")
