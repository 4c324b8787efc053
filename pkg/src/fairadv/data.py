"""UCI Adult ingestion, feature encoding, splitting, and construction of the
Z-labelled dataset that feeds the adversary head.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ADULT_COLUMNS = (
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
)
NUMERIC_COLUMNS = (
    "age",
    "fnlwgt",
    "education-num",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
)
SENSITIVE_COLUMN = "sex"
MISSING = "?"
POSITIVE_LABEL = ">50K"
NEGATIVE_LABEL = "<=50K"
FEMALE = "Female"

Z_POLICIES = ("balanced", "unbalanced")
Y_POLICIES = ("low_only", "high_only", "balanced")


class AdultParseError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    values: Tuple[str, ...]
    label: str

    def __getitem__(self, column: str) -> str:
        return self.values[ADULT_COLUMNS.index(column)]

    @property
    def sex(self) -> str:
        return self[SENSITIVE_COLUMN]


def parse_adult(text: Union[str, TextIO, Iterable[str]]) -> List[RawRecord]:
    """Parse ``adult.data``-formatted lines into records, preserving order.

    Accepts a string, an open file, or any iterable of lines. Blank lines are
    skipped; a trailing ``.`` on the label (as in ``adult.test``) is dropped.
    """
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = text
    n_fields = len(ADULT_COLUMNS) + 1
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != n_fields:
            raise AdultParseError(
                f"line {lineno}: expected {n_fields} fields, got {len(fields)}"
            )
        label = fields[-1]
        if label.endswith("."):
            label = label[:-1]
        if label not in (POSITIVE_LABEL, NEGATIVE_LABEL):
            raise AdultParseError(f"line {lineno}: unknown label {label!r}")
        records.append(RawRecord(tuple(fields[:-1]), label))
    return records


def load_adult(path) -> List[RawRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_adult(fh)


@dataclass(frozen=True)
class NumericColumn:
    name: str
    mean: float
    std: float

    @property
    def width(self) -> int:
        return 1


@dataclass(frozen=True)
class CategoricalColumn:
    name: str
    vocabulary: Tuple[str, ...]

    @property
    def width(self) -> int:
        return len(self.vocabulary)


@dataclass(frozen=True)
class FeatureSchema:
    columns: Tuple[Union[NumericColumn, CategoricalColumn], ...]

    @property
    def width(self) -> int:
        return sum(c.width for c in self.columns)

    def feature_names(self) -> List[str]:
        names = []
        for col in self.columns:
            if isinstance(col, NumericColumn):
                names.append(col.name)
            else:
                names.extend(f"{col.name}={v}" for v in col.vocabulary)
        return names


def _columns(records: Sequence[RawRecord]):
    return list(zip(*(r.values for r in records)))


def build_schema(records: Sequence[RawRecord]) -> FeatureSchema:
    """Fit standardization statistics and vocabularies on training records.

    The sensitive column is never turned into a feature. Every categorical
    vocabulary carries the ``?`` token so unseen values have somewhere to go.
    """
    if not records:
        raise ValueError("cannot build a schema from zero records")
    columns = []
    for name, raw in zip(ADULT_COLUMNS, _columns(records)):
        if name == SENSITIVE_COLUMN:
            continue
        if name in NUMERIC_COLUMNS:
            vals = np.array(raw, dtype=np.float64)
            std = float(vals.std())
            if std == 0.0:
                logger.warning("numeric column %s has zero variance; encoding as 0", name)
            columns.append(NumericColumn(name, float(vals.mean()), std))
        else:
            vocab = set(raw)
            vocab.add(MISSING)
            columns.append(CategoricalColumn(name, tuple(sorted(vocab))))
    return FeatureSchema(tuple(columns))


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    y: int
    z: int


@dataclass
class Dataset:
    """Column-stacked examples.

    ``X`` is (n, L) float64, ``y`` and ``z`` are int8 in {0, 1}. ``source``
    holds each row's index in the original parsed file so provenance can be
    checked after splitting and resampling.
    """

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray
    source: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.z = np.asarray(self.z, dtype=np.int8)
        if self.source is None:
            self.source = np.arange(len(self.y), dtype=np.int64)
        self.source = np.asarray(self.source, dtype=np.int64)
        n = self.X.shape[0]
        if not (len(self.y) == len(self.z) == len(self.source) == n):
            raise ValueError("X, y, z and source must have the same length")

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> Example:
        return Example(self.X[i], int(self.y[i]), int(self.z[i]))

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.z[idx], self.source[idx])

    def stratum_counts(self) -> dict:
        """Counts keyed by (z, y)."""
        return {
            (z, y): int(np.sum((self.z == z) & (self.y == y)))
            for z in (0, 1)
            for y in (0, 1)
        }

    @cached_property
    def csr(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, values) of the nonzero feature entries."""
        rows, cols = np.nonzero(self.X)
        indptr = np.zeros(len(self) + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=len(self)), out=indptr[1:])
        return indptr, cols.astype(np.int64), self.X[rows, cols].copy()


def encode(records: Sequence[RawRecord], schema: FeatureSchema) -> Dataset:
    n = len(records)
    X = np.zeros((n, schema.width), dtype=np.float64)
    raw_columns = _columns(records) if n else [()] * len(ADULT_COLUMNS)
    rows = np.arange(n)
    offset = 0
    for col in schema.columns:
        raw = raw_columns[ADULT_COLUMNS.index(col.name)]
        if isinstance(col, NumericColumn):
            if col.std > 0:
                vals = np.array(raw, dtype=np.float64)
                X[:, offset] = (vals - col.mean) / col.std
        else:
            lookup = {v: i for i, v in enumerate(col.vocabulary)}
            fallback = lookup.get(MISSING, -1)
            slots = np.fromiter((lookup.get(v, fallback) for v in raw), dtype=np.int64, count=n)
            hit = slots >= 0
            X[rows[hit], offset + slots[hit]] = 1.0
        offset += col.width
    y = np.array([r.label == POSITIVE_LABEL for r in records], dtype=np.int8)
    z = np.array([r.sex == FEMALE for r in records], dtype=np.int8)
    return Dataset(X, y, z)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(n: int, seed, test_fraction: float = 0.25) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted (train, test) row indices; the test side holds round(test_fraction * n)."""
    if n < 2:
        raise ValueError("need at least two examples to split")
    n_test = _round_half_up(test_fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split_train_test(
    data: Dataset, seed, test_fraction: float = 0.25
) -> Tuple[Dataset, Dataset]:
    """Unstratified random split of an encoded dataset."""
    train_idx, test_idx = split_indices(len(data), seed, test_fraction)
    return data.subset(train_idx), data.subset(test_idx)


def prepare_adult(path, split_seed) -> Tuple[Dataset, Dataset, FeatureSchema]:
    """Parse, split 75/25, fit the schema on the training rows, encode both sides.

    ``source`` on the returned datasets indexes rows of the file.
    """
    records = load_adult(path)
    train_idx, test_idx = split_indices(len(records), split_seed)
    train_records = [records[i] for i in train_idx]
    schema = build_schema(train_records)
    train = encode(train_records, schema)
    test = encode([records[i] for i in test_idx], schema)
    train.source, test.source = train_idx, test_idx
    return train, test, schema


@dataclass(frozen=True)
class AdvDataSpec:
    size: int = 2000
    z_policy: str = "balanced"
    y_policy: str = "balanced"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("adversarial dataset size must be >= 1")
        if self.z_policy not in Z_POLICIES:
            raise ValueError(f"z_policy must be one of {Z_POLICIES}")
        if self.y_policy not in Y_POLICIES:
            raise ValueError(f"y_policy must be one of {Y_POLICIES}")

    @property
    def name(self) -> str:
        return f"adv-{self.z_policy}Z-{self.y_policy}-{self.size}"


def _split_even(total: int, parts: int) -> List[int]:
    # earlier parts absorb the remainder
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _draw(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform without replacement until the pool runs out, then with replacement."""
    if k <= len(pool):
        return rng.choice(pool, size=k, replace=False)
    head = rng.permutation(pool)
    tail = rng.choice(pool, size=k - len(pool), replace=True)
    return np.concatenate([head, tail])


def _stratum_name(z: Optional[int], y: int) -> str:
    income = NEGATIVE_LABEL if y == 0 else POSITIVE_LABEL
    if z is None:
        return f"(Y={income})"
    return f"(Z={'Female' if z else 'Male'}, Y={income})"


def build_adv_dataset(train: Dataset, spec: AdvDataSpec, seed: int) -> Dataset:
    """Draw the adversary's dataset from ``train`` with the composition in ``spec``.

    Strata are visited in (z=0, z=1) x (y=0, y=1) order; odd sizes give the
    extra example to the earlier stratum. With ``z_policy='unbalanced'`` each
    selected Y class is sampled uniformly, so Z follows that class's empirical
    distribution in ``train``.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(seed)
    if spec.y_policy == "low_only":
        y_counts = {0: spec.size}
    elif spec.y_policy == "high_only":
        y_counts = {1: spec.size}
    else:
        lo, hi = _split_even(spec.size, 2)
        y_counts = {0: lo, 1: hi}

    chosen = []
    for y, n_y in y_counts.items():
        if n_y == 0:
            continue
        if spec.z_policy == "balanced":
            for z, n_zy in zip((0, 1), _split_even(n_y, 2)):
                if n_zy == 0:
                    continue
                pool = np.flatnonzero((train.y == y) & (train.z == z))
                if len(pool) == 0:
                    raise ValueError(f"stratum {_stratum_name(z, y)} is empty in train")
                chosen.append(_draw(pool, n_zy, rng))
        else:
            pool = np.flatnonzero(train.y == y)
            if len(pool) == 0:
                raise ValueError(f"stratum {_stratum_name(None, y)} is empty in train")
            chosen.append(_draw(pool, n_y, rng))
    return train.subset(np.concatenate(chosen))


class BatchStream:
    """Endless fixed-size batches of row indices into a dataset.

    Each epoch is a fresh permutation; a batch may straddle two epochs.
    """

    def __init__(self, n: int, batch_size: int, seed):
        if n <= 0:
            raise ValueError("cannot stream batches from an empty dataset")
        if batch_size <= 0:
            raise ValueError("batch size must be positive")
        self.n = n
        self.batch_size = batch_size
        self._rng = np.random.default_rng(seed)
        self._order = self._rng.permutation(n)
        self._pos = 0

    def next_indices(self, n_batches: int = 1) -> np.ndarray:
        """Return an (n_batches, batch_size) array of row indices."""
        need = n_batches * self.batch_size
        out = np.empty(need, dtype=np.int64)
        filled = 0
        while filled < need:
            if self._pos == self.n:
                self._order = self._rng.permutation(self.n)
                self._pos = 0
            take = min(need - filled, self.n - self._pos)
            out[filled : filled + take] = self._order[self._pos : self._pos + take]
            filled += take
            self._pos += take
        return out.reshape(n_batches, self.batch_size)

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        return self.next_indices(1)[0]


def batch_stream(dataset: Dataset, batch_size: int, seed):
    """Yield ``Dataset`` batches of exactly ``batch_size`` rows, forever."""
    if len(dataset) == 0:
        raise ValueError("cannot stream batches from an empty dataset")
    stream = BatchStream(len(dataset), batch_size, seed)
    return (dataset.subset(idx) for idx in stream)
