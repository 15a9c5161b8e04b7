"""
Shared domain types, errors and seeded random-stream derivation.

A ``LongitudinalDataset`` is a wide table: one row per subject, one column per
variable.  Outcome columns carry a time code.  Missing cells are flagged in a
boolean mask and hold NaN in ``values``; nothing downstream reads a masked
cell.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROLES = ("id", "group", "outcome", "covariate")
KINDS = ("continuous", "binary", "nominal")


class MmmiError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(MmmiError):
    exit_code = 2


class ParameterError(ConfigError):
    pass


class DataError(MmmiError):
    exit_code = 3


class GridError(DataError):
    pass


class PatternError(DataError):
    pass


class NumericError(MmmiError):
    exit_code = 4


class SingularDesignError(NumericError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class FitError(NumericError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


# ---------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class StreamPath:
    """Address of an independent random stream: a master seed plus a path.

    Paths are built by chaining :meth:`child`, e.g.
    ``StreamPath(7).child("rep", 3).child("imputation", 12)``.
    """

    master_seed: int
    path: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ParameterError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        for tag, index in self.path:
            if not isinstance(tag, str) or not tag:
                raise ParameterError(f"stream tag must be a non-empty string, got {tag!r}")
            if int(index) != index:
                raise ParameterError(f"stream index must be an integer, got {index!r}")

    def child(self, tag: str, index: int = 0) -> "StreamPath":
        return StreamPath(self.master_seed, self.path + ((tag, int(index)),))

    def key(self) -> bytes:
        h = hashlib.blake2b(digest_size=16, person=b"mmmi-stream-v1")
        h.update(struct.pack("<Q", int(self.master_seed)))
        for tag, index in self.path:
            encoded = tag.encode("utf-8")
            h.update(struct.pack("<I", len(encoded)))
            h.update(encoded)
            h.update(struct.pack("<q", int(index)))
        return h.digest()


def derive_stream(path: StreamPath) -> np.random.Generator:
    """Return a Philox generator keyed by a hash of ``(master_seed, path)``.

    The result depends only on the path, never on call order or on which
    worker asks for it.
    """
    key = np.frombuffer(path.key(), dtype="<u8").copy()
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class Column:
    name: str
    role: str
    kind: str = "continuous"
    time: float | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"column {self.name!r}: unknown type {self.kind!r}")
        if self.role == "outcome" and self.time is None:
            raise ConfigError(f"outcome column {self.name!r} needs a time code")


def _frozen(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    columns: tuple[Column, ...]
    values: np.ndarray
    mask: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        columns = tuple(self.columns)
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise DataError(
                f"values has shape {values.shape}, expected (subjects, {len(columns)})"
            )
        if mask.shape != values.shape:
            raise DataError(f"mask shape {mask.shape} does not match values {values.shape}")
        values = np.where(mask, np.nan, values)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "_index", {c.name: i for i, c in enumerate(columns)})

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ConfigError(f"no column named {name!r}") from None

    def column(self, name: str) -> Column:
        return self.columns[self.index(name)]

    def get(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def missing(self, name: str) -> np.ndarray:
        return self.mask[:, self.index(name)]

    def by_role(self, role: str) -> list[Column]:
        return [c for c in self.columns if c.role == role]

    @property
    def outcome_columns(self) -> list[Column]:
        return sorted(self.by_role("outcome"), key=lambda c: c.time)

    @property
    def id_column(self) -> Column | None:
        ids = self.by_role("id")
        return ids[0] if ids else None

    @property
    def group_column(self) -> Column | None:
        groups = self.by_role("group")
        return groups[0] if groups else None

    def replace(self, values=None, mask=None) -> "LongitudinalDataset":
        return LongitudinalDataset(
            self.columns,
            self.values if values is None else values,
            self.mask if mask is None else mask,
        )

    def same_content(self, other: "LongitudinalDataset") -> bool:
        return (
            self.columns == other.columns
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def validate_dataset(d: LongitudinalDataset) -> list[str]:
    """List every invariant violation in ``d``; an empty list means valid."""
    problems = []
    names = d.names
    seen = set()
    for name in names:
        if name in seen:
            problems.append(f"column name {name!r} appears more than once")
        seen.add(name)

    ids = d.by_role("id")
    if len(ids) > 1:
        problems.append("more than one subject-id column: " + ", ".join(c.name for c in ids))
    for col in ids:
        i = names.index(col.name)
        miss = d.mask[:, i]
        if miss.any():
            problems.append(f"subject-id column {col.name!r} has {int(miss.sum())} missing entries")
        vals, counts = np.unique(d.values[~miss, i], return_counts=True)
        for v in vals[counts > 1]:
            problems.append(f"subject-id column {col.name!r} has duplicated id {_fmt(v)}")

    groups = d.by_role("group")
    if len(groups) > 1:
        problems.append("more than one group column: " + ", ".join(c.name for c in groups))
    for col in groups:
        miss = d.mask[:, names.index(col.name)]
        if miss.any():
            problems.append(f"group column {col.name!r} has {int(miss.sum())} missing entries")

    times = [c.time for c in d.by_role("outcome")]
    if len(set(times)) != len(times):
        problems.append("outcome columns share a time code")

    observed = d.values[~d.mask]
    if not np.all(np.isfinite(observed)):
        bad = sorted({names[j] for j in np.nonzero(~np.isfinite(d.values) & ~d.mask)[1]})
        problems.append("non-finite observed values in " + ", ".join(bad))
    if not np.all(np.isnan(d.values[d.mask])):
        problems.append("masked cells do not hold the missing sentinel")
    return problems


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class ScalarEstimate:
    q_hat: float
    u: float

    def __post_init__(self):
        if not (math.isfinite(self.q_hat) and math.isfinite(self.u)):
            raise DataError(f"non-finite estimate ({self.q_hat}, {self.u})")
        if self.u < 0:
            raise DataError(f"negative complete-data variance {self.u}")


@dataclass(frozen=True, eq=False)
class NestedEstimateGrid:
    """M x N point estimates and complete-data variances."""

    q_hat: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_hat, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if q.ndim != 2 or q.shape != u.shape:
            raise GridError(f"grid arrays must be matching 2-d arrays, got {q.shape} and {u.shape}")
        if q.shape[1] < 1:
            raise GridError("grid needs at least one imputation per model")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(u))):
            raise DataError("grid contains non-finite values")
        if np.any(u < 0):
            raise DataError("grid contains negative variances")
        object.__setattr__(self, "q_hat", _frozen(q))
        object.__setattr__(self, "u", _frozen(u))

    @property
    def m(self) -> int:
        return self.q_hat.shape[0]

    @property
    def n(self) -> int:
        return self.q_hat.shape[1]

    @classmethod
    def from_estimates(cls, rows: Sequence[Sequence[ScalarEstimate]]) -> "NestedEstimateGrid":
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise GridError("grid has holes: models have differing numbers of imputations")
        q = [[e.q_hat for e in r] for r in rows]
        u = [[e.u for e in r] for r in rows]
        return cls(np.array(q, dtype=float), np.array(u, dtype=float))

    def flat(self) -> list[ScalarEstimate]:
        return [ScalarEstimate(float(q), float(u)) for q, u in zip(self.q_hat.ravel(), self.u.ravel())]

