"""
Nonparametric bootstrap: standard deviations and percentile intervals.

Replicate r resamples the n units with replacement from a Philox counter-based
generator keyed by (seed, r), so every replicate can run on any worker and
the report does not depend on scheduling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from common.data_model import ObservationSet
from common.errors import (
    AllReplicatesFailed,
    ConfigurationError,
    EmptyInput,
    ExcessiveReplicateFailures,
    IsoPsmError,
    NonFinite,
)
from estimation.pipelines import estimator_label
from manager.settings import setting
from manager.worker_pool import map_ordered, task_rng

logger = logging.getLogger("isopsm")


@dataclass(frozen=True, eq=False)
class BootstrapReport:
    point_estimate: float
    replicates: np.ndarray
    sd: float
    q025: float
    q975: float
    mean: float
    B: int
    seed: int
    n_failed: int = 0
    label: str = ''

    def to_dict(self):
        return {
            'estimator': self.label,
            'point_estimate': self.point_estimate,
            'q025': self.q025,
            'q975': self.q975,
            'mean': self.mean,
            'sd': self.sd,
            'B': self.B,
            'seed': self.seed,
            'n_failed': self.n_failed,
        }


def _check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigurationError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def resample_indices(n: int, seed: int, replicate: int) -> np.ndarray:
    """Unit indices of bootstrap replicate `replicate`: n uniform draws from 0..n-1."""
    if n < 1:
        raise EmptyInput("cannot resample an empty dataset")
    return task_rng(_check_seed(seed), replicate).integers(0, n, size=n)


def percentile_quantile(values, p: float) -> float:
    """Order-statistic quantile with linear interpolation between closest ranks."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyInput("quantile of an empty sample")
    if not np.all(np.isfinite(values)):
        raise NonFinite("quantile sample contains non-finite values")
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"probability must lie in [0, 1], got {p}")
    return float(np.quantile(np.sort(values), p, method='linear'))


def _estimate_value(result) -> float:
    return float(getattr(result, 'value', result))


class _ReplicateTask:
    """Picklable unit of work: the estimate on replicate r, or None on failure."""

    def __init__(self, data: ObservationSet, estimator: Callable, seed: int, resampler: Callable):
        self.data = data
        self.estimator = estimator
        self.seed = seed
        self.resampler = resampler

    def __call__(self, replicate: int) -> Optional[float]:
        try:
            indices = self.resampler(self.data.n, self.seed, replicate)
            value = _estimate_value(self.estimator(self.data.take(indices)))
        except IsoPsmError as e:
            logger.warning(f"bootstrap replicate {replicate} skipped: {type(e).__name__}: {e}")
            return None
        if not np.isfinite(value):
            logger.warning(f"bootstrap replicate {replicate} skipped: non-finite estimate")
            return None
        return value


def bootstrap(data: ObservationSet, estimator: Callable, B: Optional[int] = None, seed: int = 0,
              workers: Optional[int] = None, max_failure_fraction: Optional[float] = None,
              resampler: Callable = resample_indices) -> BootstrapReport:
    """
    Re-run the full `estimator` pipeline on B resamples of the units.

    Parameters:
    -----------
    data : ObservationSet
        Original sample; the point estimate is computed on it unchanged.
    estimator : callable
        Deterministic function of an ObservationSet returning an
        EffectEstimate or a float.
    B : int
        Number of replicates (at least 2).
    seed : int
        Key of the replicate streams.
    max_failure_fraction : float
        Replicates failing with a toolkit error are skipped; more than this
        fraction of failures aborts.

    Returns:
    --------
    BootstrapReport
    """
    B = B if B is not None else setting('bootstrap', 'replicates')
    if B < 2:
        raise ConfigurationError(f"bootstrap needs at least 2 replicates, got {B}")
    seed = _check_seed(seed)
    if max_failure_fraction is None:
        max_failure_fraction = setting('bootstrap', 'max_failure_fraction')

    label = estimator_label(estimator)
    point_estimate = _estimate_value(estimator(data))

    task = _ReplicateTask(data, estimator, seed, resampler)
    outcomes = map_ordered(task, range(B), workers=workers)
    values = np.array([v for v in outcomes if v is not None], dtype=float)
    n_failed = B - values.size

    if values.size == 0:
        raise AllReplicatesFailed(f"all {B} bootstrap replicates of {label} failed")
    if n_failed > max_failure_fraction * B:
        raise ExcessiveReplicateFailures(
            f"{n_failed} of {B} bootstrap replicates of {label} failed "
            f"(limit {max_failure_fraction:.0%})")

    ordered = np.sort(values)
    sd = float(np.std(ordered, ddof=1)) if ordered.size > 1 else 0.0
    report = BootstrapReport(
        point_estimate=point_estimate,
        replicates=values,
        sd=sd,
        q025=percentile_quantile(ordered, 0.025),
        q975=percentile_quantile(ordered, 0.975),
        mean=float(np.mean(ordered)),
        B=B,
        seed=seed,
        n_failed=n_failed,
        label=label,
    )
    logger.info(f"Bootstrap {label}: B={B}, failed={n_failed}, sd={report.sd:.6g}, "
                f"interval=({report.q025:.6g}, {report.q975:.6g})")
    return report
