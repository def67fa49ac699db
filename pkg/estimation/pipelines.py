"""
Named end-to-end estimator pipelines.

A pipeline takes a raw ObservationSet and runs every stage (feature
expansion, index estimation, step fit, estimator) so that the bootstrap and
the simulation study can re-run the whole procedure on every resample.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

from common.data_model import TARGETS, EffectEstimate, ObservationSet, expand_quadratic
from common.errors import ConfigurationError, IsoPsmError, NotApplicable
from estimation.estimators import LINKS, multivariate_pava_estimators, para_estimators, psm_m_att
from estimation.index import IndexFit, LogisticFit, fit_logistic, logistic_mle, sse_fit

logger = logging.getLogger("isopsm")

PIPELINE_NAMES = ('pava-mle', 'pava-sse', 'para', 'psm')
FEATURE_SETS = ('linear', 'quadratic')
INDEX_METHODS = {'mle': 'pava-mle', 'sse': 'pava-sse'}
DEFAULT_ESTIMATORS = 'pava-mle,pava-sse,para,psm:3,psm:5,psm:10,psm:15'


def prepare_features(data: ObservationSet, features: str = 'linear') -> ObservationSet:
    if features == 'linear':
        return data
    if features == 'quadratic':
        return expand_quadratic(data)
    raise ConfigurationError(f"unknown feature set {features!r}; valid: {', '.join(FEATURE_SETS)}")


def fit_index(data: ObservationSet, method: str = 'mle',
              logistic: Optional[LogisticFit] = None) -> IndexFit:
    """Estimate the index direction by `method` ('mle' or 'sse')."""
    if method == 'mle':
        return logistic_mle(data, logistic)
    if method == 'sse':
        return sse_fit(data, logistic=logistic)
    raise ConfigurationError(f"unknown index method {method!r}; valid: {', '.join(INDEX_METHODS)}")


@dataclass(frozen=True)
class EstimatorSpec:
    """
    One estimator pipeline; instances are picklable and callable on raw data.

    `link` only matters for PARA: the known link plugged into the logistic
    linear predictor.
    """

    name: str
    M: Optional[int] = None
    target: str = 'ATT'
    features: str = 'linear'
    link: str = 'LOGISTIC'

    def __post_init__(self):
        if self.name not in PIPELINE_NAMES:
            raise ConfigurationError(f"unknown estimator {self.name!r}; valid: {', '.join(PIPELINE_NAMES)}")
        if self.target not in TARGETS:
            raise ConfigurationError(f"unknown target {self.target!r}; valid: {', '.join(TARGETS)}")
        if self.features not in FEATURE_SETS:
            raise ConfigurationError(f"unknown feature set {self.features!r}; valid: {', '.join(FEATURE_SETS)}")
        if self.link not in LINKS:
            raise ConfigurationError(f"unknown link {self.link!r}; valid: {', '.join(LINKS)}")
        if self.name == 'psm':
            if self.M is None or self.M < 1:
                raise ConfigurationError(f"psm needs a positive M, got {self.M}")
            if self.target != 'ATT':
                raise NotApplicable("PSM-M estimates the ATT only")
        elif self.M is not None:
            raise ConfigurationError(f"M only applies to psm, not {self.name}")

    @property
    def label(self) -> str:
        if self.name == 'psm':
            return f"PSM-{self.M}"
        return self.name.upper()

    @property
    def needs_logistic(self) -> bool:
        return self.name != 'pava-sse'

    def evaluate(self, data: ObservationSet, logistic: Optional[LogisticFit] = None) -> EffectEstimate:
        """
        Run the pipeline on covariates already expanded to `features`.

        `logistic` is the logistic fit of D on (1, X) for the same data; it is
        computed here when not supplied.
        """
        if self.needs_logistic and logistic is None:
            logistic = fit_logistic(data)

        if self.name == 'pava-mle':
            return multivariate_pava_estimators(data, logistic_mle(data, logistic), self.target)
        if self.name == 'pava-sse':
            return multivariate_pava_estimators(data, sse_fit(data, logistic=logistic), self.target)
        if self.name == 'para':
            return para_estimators(data, LINKS[self.link], logistic, self.target)
        return psm_m_att(data, logistic.propensity(data.x), self.M)

    def __call__(self, data: ObservationSet) -> EffectEstimate:
        return self.evaluate(prepare_features(data, self.features))


def parse_estimators(text: str, target: str = 'ATT', features: str = 'linear') -> List[EstimatorSpec]:
    """
    Parse a comma-separated selection such as "pava-mle,pava-sse,para,psm:3".

    Duplicates are dropped, keeping the first occurrence.
    """
    specs = []
    seen = set()
    for token in (t.strip().lower() for t in text.split(',')):
        if not token:
            continue
        name, _, m = token.partition(':')
        M = None
        if m:
            try:
                M = int(m)
            except ValueError:
                raise ConfigurationError(f"invalid M in estimator {token!r}")
        elif name == 'psm':
            raise ConfigurationError("psm needs a match count, e.g. psm:3")
        spec = EstimatorSpec(name=name, M=M, target=target, features=features)
        if spec.label not in seen:
            seen.add(spec.label)
            specs.append(spec)
    if not specs:
        raise ConfigurationError("no estimators selected")
    return specs


def estimator_label(estimator: Callable) -> str:
    return getattr(estimator, 'label', None) or getattr(estimator, '__name__', repr(estimator))


def evaluate_estimators(data: ObservationSet,
                        estimators: Sequence[Callable]) -> Dict[str, Union[EffectEstimate, IsoPsmError]]:
    """
    Run every estimator on one dataset, keyed by label in the given order.

    EstimatorSpec pipelines sharing a feature set share one logistic fit.
    A failing method maps to its exception and does not stop the others.
    """
    prepared: Dict[str, Union[ObservationSet, IsoPsmError]] = {}
    logistic_fits: Dict[str, Union[LogisticFit, IsoPsmError]] = {}
    results: Dict[str, Union[EffectEstimate, IsoPsmError]] = {}

    for estimator in estimators:
        label = estimator_label(estimator)
        try:
            if not isinstance(estimator, EstimatorSpec):
                results[label] = estimator(data)
                continue

            features = estimator.features
            if features not in prepared:
                try:
                    prepared[features] = prepare_features(data, features)
                except IsoPsmError as e:
                    prepared[features] = e
            if isinstance(prepared[features], IsoPsmError):
                raise prepared[features]
            expanded = prepared[features]

            logistic = None
            if features not in logistic_fits:
                try:
                    logistic_fits[features] = fit_logistic(expanded)
                except IsoPsmError as e:
                    logistic_fits[features] = e
            if isinstance(logistic_fits[features], LogisticFit):
                logistic = logistic_fits[features]
            elif estimator.needs_logistic:
                raise logistic_fits[features]

            results[label] = estimator.evaluate(expanded, logistic)
        except IsoPsmError as e:
            logger.warning(f"{label} failed: {type(e).__name__}: {e}")
            results[label] = e
    return results
