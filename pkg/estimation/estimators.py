"""
Treatment effect estimators built on the step propensity fit, the known-link
(parametric) plug-in estimators, and the nearest-neighbour PSM-M comparator.

Every function takes the ObservationSet in input order; StepPropensity values
are read in sorted order through the permutation attached to the fit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from common.data_model import EffectEstimate, EstimateDiagnostics, ObservationSet
from common.errors import ConfigurationError, DimensionMismatch, InsufficientControls, NumericalOverflow
from estimation.index import IndexFit, LogisticFit
from estimation.isotonic import StepPropensity, fit_propensity

logger = logging.getLogger("isopsm")

OVERFLOW_MARGIN = 1e-12
LINKS = {'LOGISTIC': expit, 'PROBIT': norm.cdf}
_TAG_BY_INDEX = {'LOGISTIC-MLE': 'PAVA-MLE', 'SSE': 'PAVA-SSE', 'SUPPLIED': 'UNIVARIATE-PAVA'}


@dataclass(frozen=True, eq=False)
class MatchingGroups:
    """Treated and control unit indices (input order) of every propensity block."""

    treated: Tuple[np.ndarray, ...]
    control: Tuple[np.ndarray, ...]
    values: np.ndarray

    @property
    def k(self) -> int:
        return len(self.treated)


def _sorted_arrays(data: ObservationSet, step: StepPropensity):
    if step.n != data.n:
        raise DimensionMismatch(f"fit has {step.n} units, data has {data.n}")
    if step.perm is None:
        return data.y, data.d, step.fitted
    order = step.perm.order
    return data.y[order], data.d[order], step.fitted


def _step_diagnostics(step: StepPropensity, zero_conventions: int = 0, **extra) -> EstimateDiagnostics:
    return EstimateDiagnostics(block_count=step.k, min_propensity=float(step.fitted[0]),
                               max_propensity=float(step.fitted[-1]),
                               zero_conventions=zero_conventions, extra=extra)


def mu1_hat_pava(data: ObservationSet, step: StepPropensity,
                 method: str = 'UNIVARIATE-PAVA') -> EffectEstimate:
    """(1/n) sum D_i Y_i / pi_i, with D_i / pi_i = 0/0 taken as 0."""
    y, d, pi = _sorted_arrays(data, step)
    zero = pi == 0.0
    # a zero-valued block is all controls, so its terms are exactly 0
    terms = np.where(zero, 0.0, d * y / np.where(zero, 1.0, pi))
    value = float(np.sum(terms) / data.n)
    return EffectEstimate(value=value, method=method, target='MU1',
                          diagnostics=_step_diagnostics(step, zero_conventions=int(zero.sum())))


def mu1_grouped(data: ObservationSet, step: StepPropensity,
                method: str = 'UNIVARIATE-PAVA') -> EffectEstimate:
    """Weighted average of block treated means, weights = block share of units."""
    y, d, _ = _sorted_arrays(data, step)
    starts = step.block_ends[:-1]
    treated_sums = np.add.reduceat(d * y, starts)
    treated_counts = np.add.reduceat(d, starts)
    shares = step.block_sizes / data.n
    has_treated = treated_counts > 0
    means = np.divide(treated_sums, treated_counts, out=np.zeros(step.k), where=has_treated)
    value = float(np.sum(shares * means))
    return EffectEstimate(value=value, method=method, target='MU1',
                          diagnostics=_step_diagnostics(step, zero_conventions=int((~has_treated).sum())))


def att_hat_pava(data: ObservationSet, step: StepPropensity,
                 method: str = 'UNIVARIATE-PAVA') -> EffectEstimate:
    """
    (1/n1) sum {D_j Y_j - (1 - D_j) Y_j pi_j / (1 - pi_j)}.

    A control unit never sits in a block with value 1 (that block would be all
    treated), so the odds are finite without clipping.
    """
    y, d, pi = _sorted_arrays(data, step)
    control = d == 0
    odds = np.zeros_like(pi)
    odds[control] = pi[control] / (1.0 - pi[control])
    value = float(np.sum(d * y - (1 - d) * y * odds) / data.n1)
    return EffectEstimate(value=value, method=method, target='ATT', diagnostics=_step_diagnostics(step))


def matching_groups(data: ObservationSet, step: StepPropensity) -> MatchingGroups:
    order = step.perm.order if step.perm is not None else np.arange(data.n)
    treated, control = [], []
    for start, end in zip(step.block_ends[:-1], step.block_ends[1:]):
        units = order[start:end]
        in_block = data.d[units]
        treated.append(units[in_block == 1])
        control.append(units[in_block == 0])
    return MatchingGroups(treated=tuple(treated), control=tuple(control), values=step.block_values)


def matching_form_att(data: ObservationSet, step: StepPropensity,
                      method: str = 'UNIVARIATE-PAVA') -> EffectEstimate:
    """
    Every treated unit minus the mean control outcome of its block. A block
    without controls contributes a matched mean of 0.
    """
    groups = matching_groups(data, step)
    total = 0.0
    unmatched = 0
    for treated, control in zip(groups.treated, groups.control):
        if treated.size == 0:
            continue
        if control.size == 0:
            unmatched += treated.size
            matched = 0.0
        else:
            matched = float(np.mean(data.y[control]))
        total += float(np.sum(data.y[treated])) - treated.size * matched
    return EffectEstimate(value=total / data.n1, method=method, target='ATT',
                          diagnostics=_step_diagnostics(step, zero_conventions=unmatched))


def hirano_att(data: ObservationSet, step: StepPropensity,
               method: str = 'UNIVARIATE-PAVA') -> EffectEstimate:
    """Same weighted sum as att_hat_pava, normalized by sum of fitted propensities."""
    y, d, pi = _sorted_arrays(data, step)
    control = d == 0
    odds = np.zeros_like(pi)
    odds[control] = pi[control] / (1.0 - pi[control])
    value = float(np.sum(d * y - (1 - d) * y * odds) / np.sum(pi))
    return EffectEstimate(value=value, method=method, target='ATT', diagnostics=_step_diagnostics(step))


def multivariate_pava_estimators(data: ObservationSet, index: IndexFit, target: str) -> EffectEstimate:
    """PAVA on Z = X'beta_hat, then the univariate estimator of `target` (MU1 or ATT)."""
    if index.beta.shape[0] != data.dim:
        raise DimensionMismatch(f"index has {index.beta.shape[0]} components, data has {data.dim}")
    method = 'UNIVARIATE-PAVA' if data.dim == 1 else _TAG_BY_INDEX[index.method]
    step = fit_propensity(data, data.x @ index.beta)
    logger.debug(f"{method}: beta={np.round(index.beta, 6)}, blocks={step.k}")
    if target == 'MU1':
        estimate = mu1_hat_pava(data, step, method=method)
    elif target == 'ATT':
        estimate = att_hat_pava(data, step, method=method)
    else:
        raise ConfigurationError(f"unknown target {target!r}")
    diagnostics = replace(estimate.diagnostics, extra={**estimate.diagnostics.extra, 'index_method': index.method})
    return replace(estimate, diagnostics=diagnostics)


def para_estimators(data: ObservationSet, link: Callable, index_with_intercept: LogisticFit,
                    target: str) -> EffectEstimate:
    """
    Plug-in estimators with propensities link(intercept + X'slope).

    Propensities within 1e-12 of 0 or 1 raise NumericalOverflow; they are
    never clipped.
    """
    pi = np.broadcast_to(np.asarray(link(index_with_intercept.linear_predictor(data.x)), dtype=float),
                         (data.n,))
    if np.any(pi < OVERFLOW_MARGIN) or np.any(pi > 1.0 - OVERFLOW_MARGIN):
        raise NumericalOverflow("parametric propensity within 1e-12 of 0 or 1")

    d, y = data.d, data.y
    if target == 'MU1':
        value = float(np.sum(d * y / pi) / data.n)
    elif target == 'ATT':
        value = float(np.sum(d * y - (1 - d) * y * pi / (1.0 - pi)) / data.n1)
    else:
        raise ConfigurationError(f"unknown target {target!r}")
    diagnostics = EstimateDiagnostics(block_count=int(np.unique(pi).size), min_propensity=float(pi.min()),
                                      max_propensity=float(pi.max()))
    return EffectEstimate(value=value, method='PARA', target=target, diagnostics=diagnostics)


def psm_m_att(data: ObservationSet, fitted_propensity, M: int,
              chunk_size: Optional[int] = 2048) -> EffectEstimate:
    """
    Match every treated unit with its M nearest controls on the propensity
    scale, with replacement; controls tied with the M-th nearest distance are
    all included and averaged with equal weight.
    """
    p = np.asarray(fitted_propensity, dtype=float)
    if p.shape != (data.n,):
        raise DimensionMismatch(f"propensity has shape {p.shape}, expected ({data.n},)")
    if M < 1:
        raise ConfigurationError(f"M must be a positive integer, got {M}")
    if data.n0 < M:
        raise InsufficientControls(f"{data.n0} controls available, {M} requested")

    treated = data.d == 1
    p1, y1 = p[treated], data.y[treated]
    p0, y0 = p[~treated], data.y[~treated]

    chunk_size = chunk_size or max(p1.shape[0], 1)
    matched_means = np.empty(p1.shape[0])
    matched_counts = np.empty(p1.shape[0], dtype=np.int64)
    for start in range(0, p1.shape[0], chunk_size):
        stop = start + chunk_size
        distance = np.abs(p1[start:stop, None] - p0[None, :])
        radius = np.partition(distance, M - 1, axis=1)[:, M - 1]
        mask = distance <= radius[:, None]
        matched_counts[start:stop] = mask.sum(axis=1)
        matched_means[start:stop] = (mask * y0).sum(axis=1) / matched_counts[start:stop]

    value = float(np.mean(y1 - matched_means))
    diagnostics = EstimateDiagnostics(block_count=int(np.unique(p).size), min_propensity=float(p.min()),
                                      max_propensity=float(p.max()),
                                      extra={'M': int(M), 'tied_extra_matches': int(matched_counts.sum() - M * p1.size)})
    return EffectEstimate(value=value, method='PSM-M', target='ATT', diagnostics=diagnostics)
