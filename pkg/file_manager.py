"""
Run artifacts (checkpoints, matrices, labels, traces, metrics) and the
runs/YYYY-MM-DD/RUN_NAME/ folder layout.

Every write goes to a temporary sibling first and is renamed into place, so a failed
command never leaves a partial file behind.
"""
import json
import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from config import RUNS_DIR
from exceptions import CheckpointError, DataError
from nn_model import ACTIVATIONS, AutoEncoder, Layer, MlpModel

logger = logging.getLogger("FileManager")

CHECKPOINT_MAGIC = b"AHCLCKPT"
CHECKPOINT_VERSION = 2
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


class _Reader:
    """Sequential little-endian reader over checkpoint bytes."""

    def __init__(self, payload: bytes, source: Path):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, dtype: str, count: int = 1) -> NDArray:
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.payload):
            raise CheckpointError(f"truncated checkpoint: {self.source}")
        values = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return values


class FileManager:
    """
    Manages run folders and artifact files
    Folder layout: runs/YYYY-MM-DD/RUN_NAME/
    """

    def __init__(self, base_dir: PathLike = RUNS_DIR):
        self.base_dir = Path(base_dir)

    def _get_date_str(self) -> str:
        return datetime.now().strftime("%Y-%m-%d")

    def get_or_create_run_directory(self, run_name: str, date_str: Optional[str] = None) -> Path:
        """
        Args:
            run_name: folder name for this run (e.g. dataset name)
            date_str: YYYY-MM-DD, defaults to today
        """
        path = self.base_dir / (date_str or self._get_date_str()) / run_name
        path.mkdir(parents=True, exist_ok=True)
        return path

    # ====== atomic writes ======

    @staticmethod
    def atomic_write(path: PathLike, writer: Callable[[Path], None]) -> Path:
        """Call `writer(tmp_path)` then rename onto `path`; the temp file is removed on failure."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        os.close(fd)
        tmp_path = Path(tmp_name)
        try:
            writer(tmp_path)
            os.replace(tmp_path, path)
        except BaseException:
            tmp_path.unlink(missing_ok=True)
            raise
        return path

    def write_text(self, path: PathLike, text: str) -> Path:
        return self.atomic_write(path, lambda tmp: tmp.write_text(text, encoding="utf-8"))

    def write_frame(self, path: PathLike, frame: pd.DataFrame, header: bool = True) -> Path:
        return self.atomic_write(
            path, lambda tmp: frame.to_csv(tmp, index=False, header=header, float_format=FLOAT_FORMAT))

    # ====== checkpoints ======

    def save_checkpoint(self, model: AutoEncoder, path: PathLike) -> Path:
        chunks = [CHECKPOINT_MAGIC,
                  np.array([CHECKPOINT_VERSION], dtype="<u4").tobytes(),
                  np.array([int(model.normalize)], dtype="<u1").tobytes(),
                  np.array([model.radius], dtype="<f8").tobytes()]
        for mlp in (model.encoder, model.decoder):
            chunks.append(np.array([mlp.rng_seed], dtype="<i8").tobytes())
            chunks.append(np.array([len(mlp.layers)], dtype="<u4").tobytes())
            for layer in mlp.layers:
                chunks.append(np.array(layer.weight.shape, dtype="<u4").tobytes())
                chunks.append(np.array([ACTIVATIONS.index(layer.activation)], dtype="<u1").tobytes())
                chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
                chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        payload = b"".join(chunks)
        self.atomic_write(path, lambda tmp: tmp.write_bytes(payload))
        logger.info(f"💾 checkpoint saved: {path}")
        return Path(path)

    def load_checkpoint(self, path: PathLike) -> AutoEncoder:
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        payload = path.read_bytes()
        if not payload.startswith(CHECKPOINT_MAGIC):
            raise CheckpointError(f"not a checkpoint file: {path}")

        reader = _Reader(payload, path)
        reader.offset = len(CHECKPOINT_MAGIC)
        version = int(reader.take("<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        normalize = bool(reader.take("<u1")[0])
        radius = float(reader.take("<f8")[0])

        models = []
        for _ in range(2):
            seed = int(reader.take("<i8")[0])
            n_layers = int(reader.take("<u4")[0])
            layers = []
            for _ in range(n_layers):
                in_dim, out_dim = (int(v) for v in reader.take("<u4", 2))
                code = int(reader.take("<u1")[0])
                if code >= len(ACTIVATIONS):
                    raise CheckpointError(f"unknown activation code {code} in {path}")
                weight = reader.take("<f8", in_dim * out_dim).reshape(in_dim, out_dim).astype(np.float64)
                bias = reader.take("<f8", out_dim).astype(np.float64)
                layers.append(Layer(weight=weight, bias=bias, activation=ACTIVATIONS[code]))
            try:
                models.append(MlpModel(layers=layers, rng_seed=seed))
            except ValueError as e:
                raise CheckpointError(f"inconsistent checkpoint {path}: {e}") from None
        if reader.offset != len(payload):
            raise CheckpointError(f"trailing bytes in checkpoint: {path}")
        try:
            return AutoEncoder(encoder=models[0], decoder=models[1], normalize=normalize, radius=radius)
        except ValueError as e:
            raise CheckpointError(f"inconsistent checkpoint {path}: {e}") from None

    # ====== matrices, labels, traces, metrics ======

    def save_matrix(self, matrix: NDArray, path: PathLike) -> Path:
        """Dense row-major CSV without header."""
        self.write_frame(path, pd.DataFrame(np.asarray(matrix, dtype=np.float64)), header=False)
        logger.info(f"💾 matrix {matrix.shape[0]}x{matrix.shape[1]} saved: {path}")
        return Path(path)

    def load_matrix(self, path: PathLike) -> NDArray:
        path = Path(path)
        if not path.exists():
            raise DataError(f"file not found: {path}")
        try:
            frame = pd.read_csv(path, header=None, float_precision="round_trip")
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
            raise DataError(f"cannot parse matrix {path}: {e}") from None
        values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64, na_value=np.nan)
        if not np.all(np.isfinite(values)):
            raise DataError(f"matrix {path} contains missing or non-finite cells")
        return values

    def save_labels(self, labels: Iterable[int], path: PathLike) -> Path:
        text = "".join(f"{int(label)}\n" for label in labels)
        return self.write_text(path, text)

    def load_labels(self, path: PathLike) -> NDArray:
        """One integer per line."""
        path = Path(path)
        if not path.exists():
            raise DataError(f"file not found: {path}")
        try:
            frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError:
            raise DataError(f"empty label file: {path}") from None
        except pd.errors.ParserError as e:
            raise DataError(f"cannot parse label file {path}: {e}") from None
        if frame.shape[1] != 1:
            raise DataError(f"label file {path} must have one value per line")
        column = frame.iloc[:, 0].str.strip()
        parsed = pd.to_numeric(column, errors="coerce")
        bad = parsed.isna() | (parsed != parsed.round())
        if bad.any():
            line = int(np.argmax(bad.to_numpy())) + 1
            raise DataError(f"label file {path}: line {line} is not an integer: {column.iloc[line - 1]!r}")
        if parsed.empty:
            raise DataError(f"empty label file: {path}")
        return parsed.to_numpy().astype(np.int64)

    def save_trace(self, records: List[Dict[str, Any]], path: PathLike) -> Path:
        columns = ["epoch", "ahcl", "mse", "total", "lr", "radius", "wall_time", "acc", "nmi"]
        frame = pd.DataFrame(records, columns=columns) if records else pd.DataFrame(columns=columns)
        return self.write_frame(path, frame.dropna(axis=1, how="all") if records else frame)

    def append_metrics(self, records: Iterable[Dict[str, Any]], path: PathLike) -> Path:
        """Append JSON-lines metric records."""
        path = Path(path)
        existing = path.read_text(encoding="utf-8") if path.exists() else ""
        lines = "".join(json.dumps(record) + "\n" for record in records)
        return self.write_text(path, existing + lines)
