"""
Shape-restricted (monotone) propensity score estimation.

The binomial likelihood maximized over nondecreasing propensities has the same
solution as least-squares isotonic regression of the treatment indicator on
the sort order, computed here by the pool-adjacent-violators algorithm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import pandas as pd

from common.data_model import ObservationSet, SortPermutation, sort_by_key
from common.errors import DataError, DimensionMismatch, EmptyInput, IndexOutOfRange, NonFinite

logger = logging.getLogger("isopsm")


@dataclass(frozen=True, eq=False)
class StepPropensity:
    """
    Fitted step function in sorted order.

    block_ends holds 0 = i_0 < i_1 < ... < i_k = n; block j covers sorted
    positions [block_ends[j], block_ends[j + 1]) and has value block_values[j].
    """

    block_ends: np.ndarray
    block_values: np.ndarray
    fitted: np.ndarray
    perm: Optional[SortPermutation] = None

    @property
    def n(self) -> int:
        return int(self.fitted.shape[0])

    @property
    def k(self) -> int:
        return int(self.block_values.shape[0])

    @property
    def block_sizes(self) -> np.ndarray:
        return np.diff(self.block_ends)

    @property
    def block_index(self) -> np.ndarray:
        """Block number of every sorted position."""
        return np.repeat(np.arange(self.k), self.block_sizes)

    def fitted_in_input_order(self) -> np.ndarray:
        if self.perm is None:
            return self.fitted
        return self.perm.restore(self.fitted)


def _as_response(d) -> np.ndarray:
    values = np.asarray(d, dtype=float)
    if values.ndim != 1:
        raise DimensionMismatch(f"response must be one-dimensional, got shape {values.shape}")
    if values.shape[0] == 0:
        raise EmptyInput("cannot fit an empty sequence")
    if not np.all(np.isfinite(values)):
        raise NonFinite("response contains non-finite values")
    if np.any((values < 0.0) | (values > 1.0)):
        raise DataError("responses must lie in [0, 1]")
    return values


def pava_fit(d) -> StepPropensity:
    """
    Least-squares nondecreasing fit of a sequence already in sorted order.

    Parameters:
    -----------
    d : array-like
        Treatment indicators (or any values in [0, 1]) in sorted key order.

    Returns:
    --------
    StepPropensity
        Canonical block structure: adjacent blocks with equal means are merged,
        so block values are strictly increasing. Each block value is the block
        sum divided by the block length.
    """
    values = _as_response(d)
    n = values.shape[0]

    # runs of identical values never split, so the stack works on runs
    run_starts = np.flatnonzero(np.r_[True, values[1:] != values[:-1]])
    run_ends = np.r_[run_starts[1:], n]
    run_sums = np.add.reduceat(values, run_starts)
    run_counts = run_ends - run_starts

    sums, counts, ends = [], [], []
    for s, c, e in zip(run_sums.tolist(), run_counts.tolist(), run_ends.tolist()):
        # pool while the previous block mean is not strictly below the new one
        while sums and sums[-1] * c >= s * counts[-1]:
            s += sums.pop()
            c += counts.pop()
            ends.pop()
        sums.append(s)
        counts.append(c)
        ends.append(e)

    counts = np.asarray(counts, dtype=np.int64)
    block_values = np.asarray(sums, dtype=float) / counts
    block_ends = np.r_[0, np.asarray(ends, dtype=np.int64)]
    fitted = np.repeat(block_values, counts)

    for array in (block_values, block_ends, fitted):
        array.setflags(write=False)
    return StepPropensity(block_ends=block_ends, block_values=block_values, fitted=fitted)


def fit_propensity(data: ObservationSet, key) -> StepPropensity:
    """Sort units by `key` (stable) and fit PAVA to the sorted treatment indicators."""
    perm = sort_by_key(data, key)
    step = pava_fit(perm.apply(data.d))
    logger.debug(f"PAVA fit: n={step.n}, blocks={step.k}")
    return replace(step, perm=perm)


def evaluate(step: StepPropensity, unit_index_sorted: int) -> float:
    if not 0 <= unit_index_sorted < step.n:
        raise IndexOutOfRange(f"index {unit_index_sorted} outside 0..{step.n - 1}")
    return float(step.fitted[unit_index_sorted])


def check_balance(step: StepPropensity, d, h: Callable) -> float:
    """
    Empirical mean of (D_i - pi_i) * h(pi_i); vanishes for every h because the
    residuals sum to zero within each block.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != step.fitted.shape:
        raise DimensionMismatch(f"d has shape {d.shape}, fit has {step.fitted.shape}")
    weights = np.broadcast_to(np.asarray(h(step.fitted), dtype=float), step.fitted.shape)
    return float(np.mean((d - step.fitted) * weights))


def export_steps(step: StepPropensity) -> pd.DataFrame:
    """Two columns (sorted key, fitted value) for plotting the step function."""
    key = step.perm.key if step.perm is not None else np.arange(step.n, dtype=float)
    return pd.DataFrame({'key': key, 'fitted': step.fitted})
