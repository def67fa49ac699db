"""
Observation container, validation, sorting permutations and the estimate type
shared by the estimation, inference, simulation and command layers.

All containers are frozen dataclasses over read-only numpy arrays, so they can
be shared between worker processes and threads without copying or locking.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence

import numpy as np
import pandas as pd

from common.errors import (
    DegenerateArm,
    DimensionMismatch,
    EmptyInput,
    NonBinaryTreatment,
    NonFinite,
    NumericalOverflow,
    ParseError,
)

METHODS = ('PAVA-MLE', 'PAVA-SSE', 'PARA', 'PSM-M', 'UNIVARIATE-PAVA')
TARGETS = ('MU1', 'ATT')


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """
    n records of (outcome y, treatment d, covariate vector x).

    Construct through `validate` (row records), `ObservationSet.from_arrays`
    or `read_csv`; all three enforce the same invariants.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray

    @classmethod
    def from_arrays(cls, y, d, x) -> 'ObservationSet':
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        d_raw = np.asarray(d, dtype=float)

        if y.ndim != 1:
            raise DimensionMismatch(f"y must be one-dimensional, got shape {y.shape}")
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[1] < 1:
            raise DimensionMismatch(f"x must be an (n, dim) array, got shape {x.shape}")
        if not (len(y) == len(d_raw) == x.shape[0]):
            raise DimensionMismatch(
                f"length mismatch: y={len(y)}, d={len(d_raw)}, x={x.shape[0]}")
        if len(y) == 0:
            raise EmptyInput("no observations")

        if not np.all(np.isfinite(y)):
            raise NonFinite(f"non-finite outcome at unit {int(np.flatnonzero(~np.isfinite(y))[0])}")
        if not np.all(np.isfinite(x)):
            row = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise NonFinite(f"non-finite covariate at unit {row}")
        if not np.all(np.isfinite(d_raw)):
            raise NonFinite(f"non-finite treatment at unit {int(np.flatnonzero(~np.isfinite(d_raw))[0])}")
        bad = (d_raw != 0.0) & (d_raw != 1.0)
        if np.any(bad):
            unit = int(np.flatnonzero(bad)[0])
            raise NonBinaryTreatment(f"treatment must be 0 or 1, got {d_raw[unit]!r} at unit {unit}")

        d_int = d_raw.astype(np.int64)
        n1 = int(d_int.sum())
        if n1 == 0 or n1 == len(d_int):
            arm = 'control' if n1 == len(d_int) else 'treated'
            raise DegenerateArm(f"no {arm} units among {len(d_int)} observations")

        return cls(y=_frozen(y), d=_frozen(d_int), x=_frozen(x))

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])

    @property
    def n1(self) -> int:
        return int(self.d.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def take(self, indices: Sequence[int]) -> 'ObservationSet':
        """Row subset or resample (indices may repeat); re-validated."""
        indices = np.asarray(indices, dtype=np.int64)
        return ObservationSet.from_arrays(self.y[indices], self.d[indices], self.x[indices])

    def with_covariates(self, x: np.ndarray) -> 'ObservationSet':
        return ObservationSet.from_arrays(self.y, self.d, x)

    def with_outcomes(self, y: np.ndarray) -> 'ObservationSet':
        return ObservationSet.from_arrays(y, self.d, self.x)

    def __repr__(self):
        return f"ObservationSet(n={self.n}, dim={self.dim}, n1={self.n1})"


@dataclass(frozen=True, eq=False)
class SortPermutation:
    """Stable nondecreasing ordering of a scalar key: key == raw_key[order]."""

    order: np.ndarray
    key: np.ndarray

    @property
    def n(self) -> int:
        return int(self.order.shape[0])

    def inverse(self) -> np.ndarray:
        inverse = np.empty_like(self.order)
        inverse[self.order] = np.arange(self.n)
        return inverse

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Reorder per-unit values (input order) into sorted order."""
        return np.asarray(values)[self.order]

    def restore(self, sorted_values: np.ndarray) -> np.ndarray:
        """Map per-unit values in sorted order back to input order."""
        return np.asarray(sorted_values)[self.inverse()]


@dataclass(frozen=True)
class EstimateDiagnostics:
    block_count: int
    min_propensity: float
    max_propensity: float
    zero_conventions: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class EffectEstimate:
    value: float
    method: str
    target: str
    diagnostics: EstimateDiagnostics

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target tag {self.target!r}")
        if not np.isfinite(self.value):
            raise NumericalOverflow(f"{self.method} {self.target} estimate is not finite")
        if self.diagnostics.block_count < 1:
            raise ValueError("block count must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        diagnostics = self.diagnostics
        return {
            'method': self.method,
            'target': self.target,
            'value': float(self.value),
            'diagnostics': {
                'block_count': diagnostics.block_count,
                'min_propensity': diagnostics.min_propensity,
                'max_propensity': diagnostics.max_propensity,
                'zero_conventions': diagnostics.zero_conventions,
                **diagnostics.extra,
            },
        }


def validate(raw_records: Iterable) -> ObservationSet:
    """
    Build an ObservationSet from (y, d, x) records.

    Parameters:
    -----------
    raw_records : iterable of (y, d, x)
        x may be a scalar (dim 1) or a sequence of covariates.

    Returns:
    --------
    ObservationSet
        Never drops rows; any invalid record raises.
    """
    records = list(raw_records)
    if not records:
        raise EmptyInput("record list is empty")

    ys, ds, xs = [], [], []
    dim = None
    for row, record in enumerate(records):
        try:
            y, d, x = record
        except (TypeError, ValueError):
            raise DimensionMismatch(f"record {row} is not a (y, d, x) triple")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.ndim != 1:
            raise DimensionMismatch(f"record {row}: covariates must be a flat vector")
        if dim is None:
            dim = x.shape[0]
        elif x.shape[0] != dim:
            raise DimensionMismatch(f"record {row} has {x.shape[0]} covariates, expected {dim}")
        ys.append(y)
        ds.append(d)
        xs.append(x)

    if dim == 0:
        raise DimensionMismatch("at least one covariate is required")

    return ObservationSet.from_arrays(np.asarray(ys, dtype=float), np.asarray(ds, dtype=float),
                                      np.vstack(xs))


def sort_by_key(data: ObservationSet, key) -> SortPermutation:
    key = np.asarray(key, dtype=float)
    if key.shape != (data.n,):
        raise DimensionMismatch(f"sort key has shape {key.shape}, expected ({data.n},)")
    if not np.all(np.isfinite(key)):
        raise NonFinite("sort key contains non-finite values")
    order = np.argsort(key, kind='stable')
    return SortPermutation(order=_frozen(order), key=_frozen(key[order]))


def expand_quadratic(data: ObservationSet) -> ObservationSet:
    """Linear terms, pairwise products (i < j), then squares."""
    x = data.x
    columns = [x[:, i] for i in range(data.dim)]
    columns += [x[:, i] * x[:, j] for i, j in itertools.combinations(range(data.dim), 2)]
    columns += [x[:, i] ** 2 for i in range(data.dim)]
    return data.with_covariates(np.column_stack(columns))


def read_csv(path) -> ObservationSet:
    """
    Read a CSV with header `y`, `d`, `x1..xd` (UTF-8, `.` decimals).

    Empty or non-numeric cells raise ParseError naming the file line.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8',
                            skipinitialspace=True)
    except FileNotFoundError:
        raise ParseError(f"input file not found: {path}")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot parse {path}: {e}")
    except pd.errors.EmptyDataError:
        raise EmptyInput(f"{path} is empty")

    frame.columns = [str(c).strip() for c in frame.columns]
    for column in ('y', 'd'):
        if column not in frame.columns:
            raise DimensionMismatch(f"missing required column '{column}' in {path}")
    x_columns = [c for c in frame.columns if c.startswith('x')]
    expected = [f"x{i}" for i in range(1, len(x_columns) + 1)]
    if not x_columns or sorted(x_columns, key=lambda c: (len(c), c)) != expected:
        raise DimensionMismatch(f"covariate columns must be x1..xd, got {x_columns}")
    if len(frame) == 0:
        raise EmptyInput(f"{path} has a header but no rows")

    columns = ['y', 'd'] + expected
    values = np.empty((len(frame), len(columns)))
    for row, record in enumerate(frame[columns].itertuples(index=False)):
        line = row + 2
        for j, cell in enumerate(record):
            cell = cell.strip() if isinstance(cell, str) else ''
            if cell == '':
                raise ParseError(f"empty cell in column '{columns[j]}'", line=line)
            try:
                values[row, j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r} in column '{columns[j]}'", line=line)

    return ObservationSet.from_arrays(values[:, 0], values[:, 1], values[:, 2:])
