"""
Dataset ingestion, normalisation, synthetic blobs and batch sampling
"""
import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.spatial.distance import pdist

from exceptions import (DataError, InvalidInputError, MalformedRowError, NonNumericCellError,
                        RaggedRowError, ShapeMismatchError)
from file_manager import FileManager

logger = logging.getLogger(__name__)

_FIELDS_RE = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")


@dataclass
class Dataset:
    x: NDArray
    labels: Optional[NDArray] = None
    name: str = "dataset"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[0] == 0 or self.x.shape[1] == 0:
            raise InvalidInputError(f"features must be a non-empty n x p matrix, got shape {self.x.shape}")
        if not np.all(np.isfinite(self.x)):
            raise InvalidInputError("features contain NaN or infinite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.x.shape[0],):
                raise ShapeMismatchError(f"labels length {self.labels.shape} does not match n={self.x.shape[0]}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, indices) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.x[indices], labels, self.name)


@dataclass
class Batch:
    indices: NDArray

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def n_pairs(self) -> int:
        """All ordered within-batch pairs, self-pairs included."""
        return len(self) ** 2

    def pairs(self) -> NDArray:
        """(B^2) x 2 array of ordered index pairs."""
        first, second = np.meshgrid(self.indices, self.indices, indexing="ij")
        return np.column_stack([first.ravel(), second.ravel()])


def _read_cells(path: Path, has_header: bool) -> pd.DataFrame:
    try:
        return pd.read_csv(path, header=0 if has_header else None, dtype=str,
                           keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"empty CSV file: {path}") from None
    except pd.errors.ParserError as e:
        message = str(e)
        match = _FIELDS_RE.search(message)
        if match:
            expected, line, found = (int(v) for v in match.groups())
            raise RaggedRowError(line, expected, found) from None
        line_match = re.search(r"line (\d+)", message)
        raise MalformedRowError(int(line_match.group(1)) if line_match else None, message) from None


def _first_short_row(path: Path, width: int, has_header: bool) -> Optional[Tuple[int, int]]:
    """(line, fields) of the first data line with fewer than `width` fields, None when every row is full."""
    header_pending = has_header
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for row in reader:
            if not row:
                continue
            if header_pending:
                header_pending = False
                continue
            if len(row) < width:
                return reader.line_num, len(row)
    return None


def load_csv(path: Union[str, Path], has_header: bool = False, label_column: Optional[int] = None,
             name: Optional[str] = None) -> Dataset:
    """
    Read a comma-separated numeric matrix.

    Args:
        path: CSV file
        has_header: skip the first line
        label_column: index of an integer ground-truth column to split off

    Returns:
        Dataset: features (and labels when requested)

    Raises:
        RaggedRowError / NonNumericCellError / MalformedRowError: parse failures, naming the line
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")

    cells = _read_cells(path, has_header)
    if cells.empty:
        raise DataError(f"no data rows in {path}")
    first_line = 2 if has_header else 1
    width = cells.shape[1]

    # pandas pads short rows with empty cells, indistinguishable from "1,,3" without the raw line
    if (cells.isna() | cells.eq("")).to_numpy().any():
        short = _first_short_row(path, width, has_header)
        if short is not None:
            raise RaggedRowError(short[0], width, short[1])

    try:
        values = cells.apply(lambda column: column.str.strip()).to_numpy().astype(np.float64)
    except ValueError:
        numeric = cells.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
        bad_rows, bad_cols = np.nonzero(numeric.isna().to_numpy())
        row, col = int(bad_rows[0]), int(bad_cols[0])
        raise NonNumericCellError(first_line + row, col + 1, cells.iat[row, col]) from None

    if not np.all(np.isfinite(values)):
        bad_rows, bad_cols = np.nonzero(~np.isfinite(values))
        row, col = int(bad_rows[0]), int(bad_cols[0])
        raise NonNumericCellError(first_line + row, col + 1, cells.iat[row, col])

    labels = None
    if label_column is not None:
        if not -width <= label_column < width:
            raise DataError(f"label column {label_column} out of range for {width} columns")
        label_column %= width
        raw = values[:, label_column]
        if not np.all(raw == np.round(raw)):
            raise DataError(f"label column {label_column} contains non-integer values")
        labels = raw.astype(np.int64)
        values = np.delete(values, label_column, axis=1)
        if values.shape[1] == 0:
            raise DataError("no feature columns left after removing the label column")

    dataset = Dataset(values, labels, name or path.stem)
    logger.info(f"📥 loaded {dataset.name}: n={dataset.n}, p={dataset.dim}, labels={'yes' if labels is not None else 'no'}")
    return dataset


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    """Features as columns, ground-truth labels (if any) appended as the last column."""
    frame = pd.DataFrame(dataset.x)
    if dataset.labels is not None:
        frame[frame.shape[1]] = dataset.labels
    return frame


def minmax_normalize(x: NDArray) -> NDArray:
    """Per-feature (x - min) / (max - min); constant features map to 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("cannot normalise an empty matrix")
    low = x.min(axis=0)
    span = x.max(axis=0) - low
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - low) / safe, 0.0)


def synthetic_blobs(n_per_cluster: int, k_clusters: int, dim: int, spread: float = 1.0,
                    separation: float = 12.0, seed: int = 0) -> Dataset:
    """
    Isotropic Gaussian clusters with centers at least `separation` apart.

    Centers sit on random orthonormal directions scaled so each pair is exactly
    `separation` apart; with more clusters than dimensions the random directions are
    rescaled until the closest pair is `separation` apart.
    """
    if min(n_per_cluster, k_clusters, dim) < 1 or spread <= 0 or separation <= 0:
        raise InvalidInputError("synthetic_blobs needs positive arguments")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(dim, k_clusters))
    if k_clusters <= dim:
        q, _ = np.linalg.qr(directions)
        centers = q[:, :k_clusters].T * (separation / np.sqrt(2.0))
    else:
        centers = directions.T * (separation / pdist(directions.T).min())

    labels = np.repeat(np.arange(k_clusters), n_per_cluster)
    x = centers[labels] + spread * rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(x[order], labels[order], f"blobs_k{k_clusters}_d{dim}_s{seed}")


def sample_batches(dataset: Union[Dataset, int], batch_size: int, batches_per_epoch: int,
                   seed: Union[int, np.random.Generator] = 0) -> List[Batch]:
    """
    Uniform random subsets without replacement; each batch is fully cross-paired.

    Args:
        dataset: a Dataset or its size n
        batch_size: rows per batch, <= n
        batches_per_epoch: number of batches to draw
        seed: int seed or an existing Generator
    """
    n = dataset if isinstance(dataset, int) else dataset.n
    if batch_size < 1 or batch_size > n:
        raise InvalidInputError(f"batch_size must be in [1, n={n}], got {batch_size}")
    if batches_per_epoch < 1:
        raise InvalidInputError("batches_per_epoch must be >= 1")
    rng = np.random.default_rng(seed)
    return [Batch(rng.choice(n, size=batch_size, replace=False)) for _ in range(batches_per_epoch)]


def save_csv(dataset: Dataset, path: Union[str, Path], header: bool = False) -> Path:
    """
    Write features (17 significant digits, so `load_csv` reads back the same doubles)
    with the labels, if any, as the last column.
    """
    frame = dataset_frame(dataset)
    if header:
        names = [f"x{i}" for i in range(dataset.dim)]
        frame.columns = names + (["label"] if dataset.labels is not None else [])
    path = FileManager().write_frame(path, frame, header=header)
    logger.info(f"💾 dataset {dataset.name} saved: {path}")
    return path
