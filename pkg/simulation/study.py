"""
Monte Carlo study runner: bias and RMSE of every estimator over replicated
samples of the simulation designs, in the layout of the bias/RMSE tables.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from common.errors import ConfigurationError, IsoPsmError, NumericalError
from common.serialization import dumps_report, frame_to_csv, write_text
from estimation.index import angle_between
from estimation.pipelines import EstimatorSpec, estimator_label, evaluate_estimators
from manager.settings import setting
from manager.worker_pool import map_ordered, memory_usage_mb
from simulation.dgp import DgpConfig, generate
from simulation.oracles import ORACLE_VERSION, OracleValue, asymptotic_variance_oracle, true_att

logger = logging.getLogger("isopsm")

RMSE_SLACK = 1e-9


def index_angle(b: float) -> float:
    """Angle in degrees between the outcome direction (1, b) and the propensity direction (1, 1)."""
    return float(np.degrees(angle_between(np.array([1.0, b]), np.array([1.0, 1.0]))))


@dataclass(frozen=True)
class McCell:
    model: int
    a: int
    b: int
    link: str
    n: int
    estimator: str
    bias: float
    rmse: float
    sd: float
    bias_se: float
    replicates: int
    failed: int
    true_att: float

    def __post_init__(self):
        if self.rmse ** 2 - self.bias ** 2 < -RMSE_SLACK:
            raise NumericalError(f"RMSE^2 < bias^2 in cell {self.model}/{self.a}/{self.b}/{self.estimator}")

    def to_dict(self):
        return {
            'model': self.model, 'a': self.a, 'b': self.b, 'link': self.link, 'n': self.n,
            'estimator': self.estimator, 'bias': self.bias, 'rmse': self.rmse, 'sd': self.sd,
            'bias_se': self.bias_se, 'replicates': self.replicates, 'failed': self.failed,
            'true_att': self.true_att,
        }


@dataclass(frozen=True, eq=False)
class McReport:
    """
    Aggregated study results.

    `estimates[(config key, n)]` holds an (R, n_estimators) array of
    per-replicate estimates, NaN where a replicate failed; aggregates in
    `cells` use the successful replicates only.
    """

    cells: Tuple[McCell, ...]
    estimators: Tuple[str, ...]
    configs: Tuple[DgpConfig, ...]
    truths: Dict[str, OracleValue]
    estimates: Dict[Tuple[str, int], np.ndarray] = field(repr=False)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def cell(self, config: DgpConfig, estimator: str) -> McCell:
        for cell in self.cells:
            if ((cell.model, cell.a, cell.b, cell.link, cell.n) ==
                    (config.model, config.a, config.b, config.link, config.n) and cell.estimator == estimator):
                return cell
        raise KeyError(f"no cell for {config.key}, n={config.n}, {estimator}")

    def to_frame(self) -> pd.DataFrame:
        """Bias and RMSE rows per design, one column per estimator."""
        rows = []
        for config in self.configs:
            for statistic in ('Bias', 'RMSE'):
                row = {'link': config.link.lower(), 'model': config.model, 'a': config.a, 'b': config.b,
                       'n': config.n, 'statistic': statistic}
                for label in self.estimators:
                    cell = self.cell(config, label)
                    row[label] = cell.bias if statistic == 'Bias' else cell.rmse
                rows.append(row)
        return pd.DataFrame(rows, columns=['link', 'model', 'a', 'b', 'n', 'statistic', *self.estimators])

    def replicate_frame(self) -> pd.DataFrame:
        """Long table of every replicate estimate and its error against the true ATT."""
        frames = []
        for config in self.configs:
            values = self.estimates[(config.key, config.n)]
            truth = self.truths[config.key].value
            frame = pd.DataFrame(values, columns=list(self.estimators))
            frame.insert(0, 'replicate', np.arange(values.shape[0]))
            frame = frame.melt(id_vars='replicate', var_name='estimator', value_name='estimate')
            frame['error'] = frame['estimate'] - truth
            for column, value in (('link', config.link.lower()), ('model', config.model),
                                  ('a', config.a), ('b', config.b), ('n', config.n)):
                frame[column] = value
            frames.append(frame)
        columns = ['link', 'model', 'a', 'b', 'n', 'replicate', 'estimator', 'estimate', 'error']
        return pd.concat(frames, ignore_index=True)[columns]

    def to_dict(self):
        return {
            'cells': list(self.cells),
            'truths': self.truths,
            'estimators': list(self.estimators),
            'metadata': self.metadata,
        }

    def to_csv(self, path=None) -> str:
        text = frame_to_csv(self.to_frame())
        if path is not None:
            write_text(text, path)
        return text

    def to_json(self, path=None) -> str:
        text = dumps_report(self)
        if path is not None:
            write_text(text, path)
        return text


class _StudyTask:
    """Picklable unit of work: every estimator on replicate r of one design."""

    def __init__(self, estimators: Sequence[Callable]):
        self.estimators = list(estimators)

    def __call__(self, item: Tuple[DgpConfig, int]):
        config, replicate = item
        try:
            data = generate(config, replicate)
        except IsoPsmError as e:
            logger.warning(f"{config.key} replicate {replicate}: sample rejected: {e}")
            return [None] * len(self.estimators), None
        results = evaluate_estimators(data, self.estimators)
        values = []
        for estimator in self.estimators:
            result = results[estimator_label(estimator)]
            values.append(None if isinstance(result, IsoPsmError) else float(getattr(result, 'value', result)))
        return values, data.n1 / data.n


def _summarize(config: DgpConfig, label: str, values: np.ndarray, truth: float) -> McCell:
    ok = values[np.isfinite(values)]
    failed = int(values.size - ok.size)
    if ok.size == 0:
        logger.warning(f"every replicate of {label} failed for {config.key}, n={config.n}")
        return McCell(model=config.model, a=config.a, b=config.b, link=config.link, n=config.n,
                      estimator=label, bias=np.nan, rmse=np.nan, sd=np.nan, bias_se=np.nan,
                      replicates=0, failed=failed, true_att=truth)
    errors = ok - truth
    bias = float(np.mean(errors))
    rmse = float(np.sqrt(np.mean(errors * errors)))
    sd = float(np.std(ok, ddof=1)) if ok.size > 1 else 0.0
    return McCell(model=config.model, a=config.a, b=config.b, link=config.link, n=config.n,
                  estimator=label, bias=bias, rmse=rmse, sd=sd, bias_se=sd / np.sqrt(ok.size),
                  replicates=int(ok.size), failed=failed, true_att=truth)


def run_study(configs: Sequence[DgpConfig], estimators: Sequence[Callable], R: Optional[int] = None,
              master_seed: Optional[int] = None, workers: Optional[int] = None,
              truths: Optional[Mapping[str, Any]] = None, oracle_n: Optional[int] = None) -> McReport:
    """
    Run every estimator on R replicates of every design.

    Parameters:
    -----------
    configs : list of DgpConfig
    estimators : list of EstimatorSpec or callables
        Callables must be picklable for multi-process runs and expose a
        `label` or `__name__`.
    R : int
        Replicates per design (at least 2).
    master_seed : int, optional
        Replaces the seed of every config.
    truths : mapping, optional
        True ATT per design key (float or OracleValue); computed by the
        oracle when missing.

    Returns:
    --------
    McReport
    """
    R = R if R is not None else setting('simulation', 'replicates')
    if R < 2:
        raise ConfigurationError(f"a study needs at least 2 replicates, got {R}")
    if not configs:
        raise ConfigurationError("no simulation designs given")
    if master_seed is not None:
        configs = [replace(config, seed=master_seed) for config in configs]
    labels = tuple(estimator_label(e) for e in estimators)
    if not labels:
        raise ConfigurationError("no estimators given")
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate estimator labels: {labels}")

    resolved: Dict[str, OracleValue] = {}
    for config in configs:
        given = (truths or {}).get(config.key)
        if isinstance(given, OracleValue):
            resolved[config.key] = given
        elif given is not None:
            resolved[config.key] = OracleValue(value=float(given), se=0.0, oracle_n=0)
        elif config.key not in resolved:
            resolved[config.key] = true_att(config, oracle_n)

    logger.info(f"Monte Carlo study: {len(configs)} designs x {R} replicates x {len(labels)} estimators")
    items = [(config, r) for config in configs for r in range(R)]
    outcomes = map_ordered(_StudyTask(estimators), items, workers=workers)

    cells: List[McCell] = []
    estimates: Dict[Tuple[str, int], np.ndarray] = {}
    treated: Dict[str, float] = {}
    for position, config in enumerate(configs):
        block = outcomes[position * R:(position + 1) * R]
        values = np.array([[np.nan if v is None else v for v in row] for row, _ in block], dtype=float)
        estimates[(config.key, config.n)] = values
        fractions = [fraction for _, fraction in block if fraction is not None]
        treated[f"{config.key},n={config.n}"] = float(np.mean(fractions)) if fractions else None
        for column, label in enumerate(labels):
            cells.append(_summarize(config, label, values[:, column], resolved[config.key].value))

    metadata = {
        'R': R,
        'seeds': sorted({config.seed for config in configs}),
        'oracle_version': ORACLE_VERSION,
        'index_angle': {config.key: index_angle(config.b) for config in configs},
        'treated_fraction': treated,
    }
    logger.info(f"Monte Carlo study finished; resident memory {memory_usage_mb():.0f} MB")
    return McReport(cells=tuple(cells), estimators=labels, configs=tuple(configs), truths=resolved,
                    estimates=estimates, metadata=metadata)


def compare_links(logistic_report: McReport, probit_report: McReport) -> pd.DataFrame:
    """Relative RMSE change per (design, estimator) when the true link moves from logistic to probit."""
    def keyed(report):
        return {(c.model, c.a, c.b, c.n, c.estimator): c.rmse for c in report.cells}

    logistic, probit = keyed(logistic_report), keyed(probit_report)
    rows = []
    for key in logistic:
        if key not in probit:
            continue
        model, a, b, n, estimator = key
        rows.append({'model': model, 'a': a, 'b': b, 'n': n, 'estimator': estimator,
                     'rmse_logistic': logistic[key], 'rmse_probit': probit[key],
                     'relative_change': (probit[key] - logistic[key]) / logistic[key]})
    if not rows:
        raise ConfigurationError("the two reports share no (design, estimator) cells")
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class EfficiencyCheck:
    scaled_variance: float
    bound: float
    bound_se: float
    replicates: int

    @property
    def ratio(self) -> float:
        return self.scaled_variance / self.bound

    def to_dict(self):
        return {'scaled_variance': self.scaled_variance, 'bound': self.bound, 'bound_se': self.bound_se,
                'ratio': self.ratio, 'replicates': self.replicates}


def efficiency_check(config: DgpConfig, R: Optional[int] = None, estimator: Optional[Callable] = None,
                     workers: Optional[int] = None, oracle_n: Optional[int] = None) -> EfficiencyCheck:
    """n times the across-replicate variance of the ATT estimate against the sigma_tau bound."""
    estimator = estimator or EstimatorSpec('pava-mle')
    bound = asymptotic_variance_oracle(config, 'SIGMA_TAU', oracle_n)
    report = run_study([config], [estimator], R=R, workers=workers, oracle_n=oracle_n)
    values = report.estimates[(config.key, config.n)][:, 0]
    values = values[np.isfinite(values)]
    scaled = float(config.n * np.var(values, ddof=1))
    logger.info(f"Efficiency check {config.key}, n={config.n}: n*Var={scaled:.4g}, bound={bound.value:.4g}")
    return EfficiencyCheck(scaled_variance=scaled, bound=bound.value, bound_se=bound.se,
                           replicates=int(values.size))
