"""LIBSVM ingestion and instance/feature partitioning."""

from __future__ import annotations

import gzip
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .const import DEFAULT_LABEL_MAP, LOGGER
from .errors import DatasetParseError, PartitionError


@dataclass(frozen=True)
class LabeledDataset:
    """Binary-labeled data matrix X (d x n, one column per instance)."""

    matrix: sp.csc_matrix
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self) -> None:
        if self.matrix.shape[1] != self.labels.shape[0]:
            raise ValueError(
                f"{self.matrix.shape[1]} instances but {self.labels.shape[0]} labels"
            )

    @property
    def n(self) -> int:
        """Return the number of instances."""
        return self.matrix.shape[1]

    @property
    def d(self) -> int:
        """Return the feature dimension."""
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        """Return the number of stored entries."""
        return self.matrix.nnz

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the (instance, feature, value) triples, zero-based."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return coo.col[order], coo.row[order], coo.data[order]

    @classmethod
    def from_matrix(
        cls, matrix: sp.spmatrix, labels: np.ndarray, name: str = "dataset"
    ) -> LabeledDataset:
        """Build a dataset from a d x n matrix and +-1 labels."""
        csc = sp.csc_matrix(matrix, dtype=np.float64)
        csc.sort_indices()
        return cls(
            matrix=csc, labels=np.asarray(labels, dtype=np.float64), name=name
        )


@dataclass(frozen=True)
class LabeledShard:
    """One worker's column slice X_k of the data matrix plus labels."""

    worker_id: int
    matrix: sp.csc_matrix
    labels: np.ndarray
    instance_offset: int = 0

    @property
    def n_k(self) -> int:
        """Return the local instance count."""
        return self.matrix.shape[1]

    @property
    def d(self) -> int:
        """Return the feature dimension."""
        return self.matrix.shape[0]

    @property
    def instances(self) -> range:
        """Return the global indices of the instances held by this shard."""
        return range(self.instance_offset, self.instance_offset + self.n_k)


@dataclass(frozen=True)
class FeaturePartition:
    """Contiguous disjoint cover J_1..J_K of the feature indices."""

    bounds: tuple[int, ...]
    _sizes: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "_sizes",
            tuple(b - a for a, b in zip(self.bounds[:-1], self.bounds[1:])),
        )

    @property
    def size(self) -> int:
        """Return K."""
        return len(self.bounds) - 1

    @property
    def d(self) -> int:
        """Return the feature dimension covered."""
        return self.bounds[-1]

    @property
    def sizes(self) -> tuple[int, ...]:
        """Return |J_k| for every k."""
        return self._sizes

    def slice(self, k: int) -> slice:
        """Return the zero-based slice of J_k."""
        return slice(self.bounds[k], self.bounds[k + 1])

    def indices(self, k: int) -> range:
        """Return the one-based feature indices in J_k."""
        return range(self.bounds[k] + 1, self.bounds[k + 1] + 1)


def _parse_label(token: str, label_map: Mapping[float, int], line_number: int) -> int:
    try:
        raw = float(token)
    except ValueError as err:
        raise DatasetParseError(f"malformed label {token!r}", line_number) from err
    if raw not in label_map:
        raise DatasetParseError(f"label {token!r} has no mapping", line_number)
    return label_map[raw]


def parse_libsvm(
    lines: Iterable[str],
    *,
    n_features: int | None = None,
    label_map: Mapping[float, int] | None = None,
    name: str = "dataset",
) -> LabeledDataset:
    """Parse LIBSVM text into a dataset.

    Args:
        lines: Text lines of the form ``<label> <idx>:<val> ...``
        n_features: Force d (must be at least the largest index seen)
        label_map: Raw label to +-1 mapping, defaults to {0,-1} -> -1, {1,2} -> +1
        name: Dataset name used in logs and cache paths

    Returns:
        The parsed dataset with zero-based feature indices

    Raises:
        DatasetParseError: On malformed tokens or non-increasing indices
    """
    mapping = DEFAULT_LABEL_MAP if label_map is None else label_map
    rows: list[int] = []
    cols: list[int] = []
    values: list[float] = []
    labels: list[int] = []
    max_index = 0

    for line_number, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        instance = len(labels)
        labels.append(_parse_label(tokens[0], mapping, line_number))
        previous = 0
        for token in tokens[1:]:
            idx_text, sep, val_text = token.partition(":")
            if not sep:
                raise DatasetParseError(f"malformed token {token!r}", line_number)
            try:
                idx = int(idx_text)
                val = float(val_text)
            except ValueError as err:
                raise DatasetParseError(
                    f"malformed token {token!r}", line_number
                ) from err
            if idx < 1:
                raise DatasetParseError(f"feature index {idx} < 1", line_number)
            if idx <= previous:
                raise DatasetParseError(
                    f"feature index {idx} does not increase (previous {previous})",
                    line_number,
                )
            if n_features is not None and idx > n_features:
                raise DatasetParseError(
                    f"feature index {idx} exceeds configured dimension {n_features}",
                    line_number,
                )
            previous = idx
            max_index = max(max_index, idx)
            rows.append(idx - 1)
            cols.append(instance)
            values.append(val)

    d = n_features if n_features is not None else max_index
    matrix = sp.csc_matrix(
        (np.asarray(values, dtype=np.float64), (rows, cols)),
        shape=(d, len(labels)),
    )
    LOGGER.debug(
        "Parsed %d instances, %d features, %d entries from %s",
        len(labels),
        d,
        len(values),
        name,
    )
    return LabeledDataset.from_matrix(matrix, np.asarray(labels), name=name)


def load_libsvm(
    path: str | Path,
    *,
    n_features: int | None = None,
    label_map: Mapping[float, int] | None = None,
) -> LabeledDataset:
    """Read a LIBSVM file, gzip-compressed when the name ends in ``.gz``."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as handle:
        dataset = parse_libsvm(
            handle, n_features=n_features, label_map=label_map, name=path.name
        )
    LOGGER.info(
        "Loaded %s: n=%d, d=%d, nnz=%d", path, dataset.n, dataset.d, dataset.nnz
    )
    return dataset


def dump_libsvm(dataset: LabeledDataset) -> str:
    """Serialize a dataset back to LIBSVM text (one-based indices).

    LIBSVM text does not record d: trailing all-zero features are lost, so
    reparse with ``parse_libsvm(..., n_features=dataset.d)`` to keep it.
    """
    matrix = dataset.matrix
    lines = []
    for i in range(dataset.n):
        start, end = matrix.indptr[i], matrix.indptr[i + 1]
        label = "+1" if dataset.labels[i] > 0 else "-1"
        features = " ".join(
            f"{idx + 1}:{val!r}"
            for idx, val in zip(
                matrix.indices[start:end].tolist(), matrix.data[start:end].tolist()
            )
        )
        lines.append(f"{label} {features}".rstrip())
    return "\n".join(lines) + "\n"


def partition_instances(dataset: LabeledDataset, size: int) -> list[LabeledShard]:
    """Split the instances evenly and contiguously across ``size`` workers.

    Worker k holds instances [floor(k n / K), floor((k + 1) n / K)).

    Raises:
        PartitionError: If K < 1 or K > n
    """
    if size < 1:
        raise PartitionError(f"need at least one worker, got {size}")
    if size > dataset.n:
        raise PartitionError(f"{size} workers for only {dataset.n} instances")
    bounds = [(k * dataset.n) // size for k in range(size + 1)]
    shards = [
        LabeledShard(
            worker_id=k,
            matrix=dataset.matrix[:, bounds[k] : bounds[k + 1]].tocsc(),
            labels=dataset.labels[bounds[k] : bounds[k + 1]].copy(),
            instance_offset=bounds[k],
        )
        for k in range(size)
    ]
    LOGGER.debug("Instance shard sizes: %s", [s.n_k for s in shards])
    return shards


def partition_features(d: int, size: int) -> FeaturePartition:
    """Split {1..d} into ``size`` contiguous ranges whose sizes differ by at most one.

    The first d mod K ranges get the extra feature; K > d leaves trailing ranges empty.
    """
    if size < 1 or d < 1:
        raise PartitionError(f"cannot partition d={d} features over K={size}")
    base, extra = divmod(d, size)
    bounds = [0]
    for k in range(size):
        bounds.append(bounds[-1] + base + (1 if k < extra else 0))
    return FeaturePartition(bounds=tuple(bounds))


def _planted_labels(
    matrix: sp.csc_matrix, rng: np.random.Generator, flip: float, support: float
) -> np.ndarray:
    d = matrix.shape[0]
    chosen = rng.choice(d, size=max(1, int(d * support)), replace=False)
    w_true = np.zeros(d)
    w_true[chosen] = rng.standard_normal(chosen.size)
    margins = matrix.T @ w_true
    labels = np.where(margins >= 0.0, 1.0, -1.0)
    flips = rng.random(labels.size) < flip
    labels[flips] *= -1.0
    return labels


def _zipf_matrix(
    n: int, d: int, density: float, zipf: float, rng: np.random.Generator
) -> sp.csc_matrix:
    """Draw +-1 entries whose feature frequencies fall off as rank**-zipf."""
    weights = 1.0 / np.arange(1, d + 1) ** zipf
    weights /= weights.sum()
    counts = np.maximum(rng.binomial(d, density, size=n), 1)
    instance = np.repeat(np.arange(n, dtype=np.int64), counts)
    feature = rng.choice(d, size=instance.size, p=weights)
    # a feature drawn twice for one instance is stored once
    keys = np.unique(instance * d + feature)
    instance, feature = np.divmod(keys, d)
    data = rng.choice((-1.0, 1.0), size=keys.size)
    return sp.csc_matrix((data, (feature, instance)), shape=(d, n))


def make_sparse_dataset(
    n: int,
    d: int,
    density: float = 0.01,
    seed: int = 0,
    flip: float = 0.1,
    *,
    support: float = 0.1,
    zipf: float = 0.0,
) -> LabeledDataset:
    """Generate a text-like dataset with sparse +-1 features and noisy planted labels.

    Args:
        n: Number of instances
        d: Number of features
        density: Expected fraction of nonzero features per instance
        seed: Generator seed
        flip: Probability of flipping a planted label
        support: Fraction of features carrying planted weight
        zipf: Exponent of the feature frequency law, 0 for uniform frequencies
    """
    rng = np.random.default_rng(seed)
    if zipf > 0.0:
        matrix = _zipf_matrix(n, d, density, zipf, rng)
    else:
        matrix = sp.random(
            d,
            n,
            density=density,
            format="csc",
            random_state=rng,
            data_rvs=lambda size: rng.choice((-1.0, 1.0), size=size),
        )
    labels = _planted_labels(matrix, rng, flip, support)
    return LabeledDataset.from_matrix(
        matrix, labels, name=f"sparse-n{n}-d{d}-s{seed}"
    )


def make_dense_dataset(
    n: int,
    d: int,
    seed: int = 0,
    flip: float = 0.1,
    *,
    support: float = 0.1,
    condition: float = 1.0,
) -> LabeledDataset:
    """Generate a dense dataset with unit-norm instances and noisy planted labels.

    ``condition`` > 1 scales the features geometrically from 1 down to
    1 / condition before normalization, which makes the Hessian ill-conditioned.
    """
    rng = np.random.default_rng(seed)
    dense = rng.standard_normal((d, n))
    if condition != 1.0:
        dense *= np.geomspace(1.0, 1.0 / condition, d)[:, None]
    dense /= np.linalg.norm(dense, axis=0, keepdims=True)
    matrix = sp.csc_matrix(dense)
    labels = _planted_labels(matrix, rng, flip, support)
    return LabeledDataset.from_matrix(matrix, labels, name=f"dense-n{n}-d{d}-s{seed}")
