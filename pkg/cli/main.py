"""
Command-line front end.

    isopsm fit --input data.csv [--index-method mle|sse]
    isopsm att --input data.csv [--estimators pava-mle,psm:3] [--bootstrap B]
    isopsm bootstrap --input data.csv [--bootstrap B]
    isopsm simulate [--link logistic|probit] [--reps R] [--n N]
    isopsm export-steps --input data.csv

Reports go to --out or stdout; logs go to stderr. Exit codes: 0 success,
2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import traceback
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

import common.errors as errors
from common.data_model import read_csv
from common.errors import ConfigurationError, IsoPsmError
from common.serialization import dumps_report, frame_to_csv, write_text
from estimation.estimators import att_hat_pava, mu1_hat_pava
from estimation.index import fit_logistic
from estimation.isotonic import export_steps, fit_propensity
from estimation.pipelines import (
    DEFAULT_ESTIMATORS,
    FEATURE_SETS,
    INDEX_METHODS,
    evaluate_estimators,
    fit_index,
    parse_estimators,
    prepare_features,
)
from inference.bootstrap import bootstrap
from manager.settings import setting
from manager.worker_pool import pool_status
from simulation.dgp import B_VALUES, MODELS, POWERS, grid
from simulation.study import run_study

logger = logging.getLogger("isopsm")

COMMANDS = ('fit', 'att', 'bootstrap', 'simulate', 'export-steps')
FORMATS = ('json', 'csv')
INPUT_COMMANDS = ('fit', 'att', 'bootstrap', 'export-steps')
MU1_ESTIMATORS = 'pava-mle,pava-sse,para'


@dataclass
class RunConfig:
    command: str
    input: Optional[str] = None
    estimators: str = DEFAULT_ESTIMATORS
    index_method: str = 'mle'
    bootstrap: Optional[int] = None
    reps: Optional[int] = None
    n: Optional[int] = None
    seed: Optional[int] = None
    model: Optional[int] = None
    a: Optional[int] = None
    b: Optional[int] = None
    link: str = 'logistic'
    out: Optional[str] = None
    format: str = 'json'
    features: str = 'linear'
    target: str = 'att'
    log_level: Optional[str] = None
    workers: Optional[int] = None

    def validate(self) -> 'RunConfig':
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}; valid: {', '.join(COMMANDS)}")
        if self.command in INPUT_COMMANDS and not self.input:
            raise ConfigurationError(f"{self.command} needs --input")
        if self.format not in FORMATS:
            raise ConfigurationError(f"unknown format {self.format!r}; valid: {', '.join(FORMATS)}")
        if self.bootstrap is not None and self.bootstrap != 0 and self.bootstrap < 2:
            raise ConfigurationError(f"--bootstrap needs at least 2 replicates, got {self.bootstrap}")
        if self.command == 'bootstrap' and self.bootstrap == 0:
            raise ConfigurationError("the bootstrap command needs --bootstrap >= 2")
        if self.reps is not None and self.reps < 2:
            raise ConfigurationError(f"--reps needs at least 2 replicates, got {self.reps}")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError(f"--workers must be positive, got {self.workers}")
        if self.seed is not None and self.seed < 0:
            raise ConfigurationError(f"--seed must be non-negative, got {self.seed}")
        return self

    @property
    def seed_or_default(self) -> int:
        return self.seed if self.seed is not None else setting('simulation', 'master_seed')


def _load(config: RunConfig):
    data = read_csv(config.input)
    logger.info(f"Loaded {config.input}: n={data.n}, n1={data.n1}, dim={data.dim}")
    return data


def _failure(error: IsoPsmError) -> Dict[str, Any]:
    return {'success': False, 'error': str(error), 'type': type(error).__name__}


def cmd_fit(config: RunConfig) -> Dict[str, Any]:
    """Index fit, step summary and both univariate-on-index estimates."""
    data = prepare_features(_load(config), config.features)
    try:
        logistic = fit_logistic(data)
    except IsoPsmError as e:
        if config.index_method == 'mle':
            raise
        logger.warning(f"Logistic fit unavailable: {e}")
        logistic = None
    index = fit_index(data, config.index_method, logistic)
    step = fit_propensity(data, data.x @ index.beta)
    return {
        'command': 'fit',
        'input': str(config.input),
        'features': config.features,
        'n': data.n,
        'n1': data.n1,
        'dim': data.dim,
        'index': index,
        'logistic_coef': logistic.coef if logistic is not None else None,
        'blocks': step.k,
        'block_values': step.block_values,
        'block_sizes': step.block_sizes,
        'estimates': {
            'MU1': mu1_hat_pava(data, step),
            'ATT': att_hat_pava(data, step),
        },
    }


def _estimate_all(config: RunConfig, replicates: int) -> Dict[str, Any]:
    data = _load(config)
    selection = config.estimators
    if config.target.upper() == 'MU1' and selection == DEFAULT_ESTIMATORS:
        # PSM-M has no MU1 form
        selection = MU1_ESTIMATORS
    specs = parse_estimators(selection, target=config.target.upper(), features=config.features)
    results = evaluate_estimators(data, specs)
    seed = config.seed_or_default

    entries = {}
    for spec in specs:
        result = results[spec.label]
        if isinstance(result, IsoPsmError):
            entries[spec.label] = _failure(result)
            continue
        entry = {'success': True, 'result': result}
        if replicates:
            try:
                entry['bootstrap'] = bootstrap(data, spec, B=replicates, seed=seed, workers=config.workers)
            except IsoPsmError as e:
                logger.warning(f"Bootstrap of {spec.label} failed: {e}")
                entry['bootstrap'] = _failure(e)
        entries[spec.label] = entry

    return {
        'command': config.command,
        'input': str(config.input),
        'features': config.features,
        'target': config.target.upper(),
        'n': data.n,
        'n1': data.n1,
        'dim': data.dim,
        'bootstrap_replicates': replicates,
        'seed': seed if replicates else None,
        'estimates': entries,
    }


def cmd_att(config: RunConfig) -> Dict[str, Any]:
    """Point estimates of every selected estimator, with bootstrap blocks when --bootstrap B > 0."""
    return _estimate_all(config, config.bootstrap or 0)


def cmd_bootstrap(config: RunConfig) -> Dict[str, Any]:
    replicates = config.bootstrap if config.bootstrap is not None else setting('bootstrap', 'replicates')
    return _estimate_all(config, replicates)


def cmd_simulate(config: RunConfig):
    """Run the bias/RMSE study over the design grid of one link, optionally filtered."""
    n = config.n if config.n is not None else setting('simulation', 'n')
    configs = [c for c in grid(config.link, n=n)
               if (config.model is None or c.model == config.model)
               and (config.a is None or c.a == config.a)
               and (config.b is None or c.b == config.b)]
    specs = parse_estimators(config.estimators, target='ATT')
    logger.info(f"Worker pool: {pool_status(config.workers)}")
    return run_study(configs, specs, R=config.reps, master_seed=config.seed_or_default,
                     workers=config.workers)


def cmd_export_steps(config: RunConfig) -> pd.DataFrame:
    """(index value, PAVA fitted, logistic fitted) in index order, for overlay plots."""
    data = prepare_features(_load(config), config.features)
    logistic = fit_logistic(data)
    index = fit_index(data, config.index_method, logistic)
    step = fit_propensity(data, data.x @ index.beta)
    frame = export_steps(step).rename(columns={'key': 'index', 'fitted': 'pava'})
    frame['logistic'] = step.perm.apply(logistic.propensity(data.x))
    return frame


def _estimates_frame(report: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    for label, entry in report['estimates'].items():
        row = {'estimator': label, 'target': report['target'], 'success': entry['success']}
        if entry['success']:
            row['value'] = entry['result'].value
            boot = entry.get('bootstrap')
            if boot is not None and not isinstance(boot, dict):
                row.update({'q025': boot.q025, 'q975': boot.q975, 'mean': boot.mean, 'sd': boot.sd,
                            'n_failed': boot.n_failed})
            elif isinstance(boot, dict):
                row['error'] = boot['error']
        else:
            row['error'] = entry['error']
        rows.append(row)
    return pd.DataFrame(rows)


def render(command: str, result, fmt: str) -> str:
    if command == 'simulate':
        return result.to_csv() if fmt == 'csv' else result.to_json()
    if command == 'export-steps':
        if fmt == 'csv':
            return frame_to_csv(result)
        return dumps_report(result.to_dict(orient='list'))
    if fmt == 'csv':
        if command == 'fit':
            flat = {'blocks': result['blocks'], 'MU1': result['estimates']['MU1'].value,
                    'ATT': result['estimates']['ATT'].value}
            flat.update({f"beta{i + 1}": b for i, b in enumerate(result['index'].beta)})
            return frame_to_csv(pd.DataFrame([flat]))
        return frame_to_csv(_estimates_frame(result))
    return dumps_report(result)


COMMAND_REGISTRY: Dict[str, Callable[[RunConfig], Any]] = {
    'fit': cmd_fit,
    'att': cmd_att,
    'bootstrap': cmd_bootstrap,
    'simulate': cmd_simulate,
    'export-steps': cmd_export_steps,
}


def run_command(config: RunConfig) -> Dict[str, Any]:
    """Execute one command; failures become a structured error result with an exit code."""
    handler = COMMAND_REGISTRY.get(config.command)
    if handler is None:
        return {'success': False, 'error': f"Unknown command: {config.command}",
                'available_commands': list(COMMAND_REGISTRY), 'exit_code': 2}
    try:
        config.validate()
        result = handler(config)
        text = render(config.command, result, config.format)
    except IsoPsmError as e:
        logger.error(f"{config.command} failed: {type(e).__name__}: {e}")
        return {'success': False, 'error': str(e), 'type': type(e).__name__, 'exit_code': e.exit_code}
    except Exception as e:
        logger.error(f"{config.command} failed unexpectedly: {e}\n{traceback.format_exc()}")
        return {'success': False, 'error': str(e), 'type': type(e).__name__, 'exit_code': 1}

    logger.info(f"Command '{config.command}' executed successfully")
    return {'success': True, 'result': result, 'text': text, 'exit_code': _partial_exit_code(result)}


def _partial_exit_code(result) -> int:
    """Non-zero only when every selected estimator failed; the first failure picks the family."""
    if not isinstance(result, dict) or 'estimates' not in result or result.get('command') == 'fit':
        return 0
    entries = list(result['estimates'].values())
    if entries and not any(entry['success'] for entry in entries):
        return getattr(errors, entries[0]['type']).exit_code
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='isopsm', description='Tuning-parameter-free propensity score matching')
    subparsers = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', help='output file (default: stdout)')
    common.add_argument('--format', choices=FORMATS, default='json')
    common.add_argument('--seed', type=int)
    common.add_argument('--workers', type=int, help='worker processes (capped by ISOPSM_THREADS)')
    common.add_argument('--log-level', choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'), type=str.upper)
    common.add_argument('--estimators', default=DEFAULT_ESTIMATORS,
                        help='comma-separated: pava-mle, pava-sse, para, psm:M')

    data_args = argparse.ArgumentParser(add_help=False)
    data_args.add_argument('--input', required=True, help='CSV with columns y, d, x1..xd')
    data_args.add_argument('--features', choices=FEATURE_SETS, default='linear')
    data_args.add_argument('--target', choices=('mu1', 'att'), type=str.lower, default='att')
    data_args.add_argument('--bootstrap', type=int, metavar='B')

    # att and bootstrap take the index method from each --estimators entry
    index_args = argparse.ArgumentParser(add_help=False)
    index_args.add_argument('--index-method', choices=tuple(INDEX_METHODS), default='mle')

    for name, parents, help_text in (
            ('fit', [common, data_args, index_args], 'fit the index and the step propensity'),
            ('att', [common, data_args], 'point estimates, optionally bootstrapped'),
            ('bootstrap', [common, data_args], 'bootstrap standard deviations and percentile intervals'),
            ('export-steps', [common, data_args, index_args], 'step function and logistic fit along the index')):
        subparsers.add_parser(name, parents=parents, help=help_text)

    simulate = subparsers.add_parser('simulate', parents=[common], help='bias/RMSE simulation study')
    simulate.add_argument('--reps', type=int)
    simulate.add_argument('--n', type=int)
    simulate.add_argument('--model', type=int, choices=MODELS)
    simulate.add_argument('--a', type=int, choices=POWERS)
    simulate.add_argument('--b', type=int, choices=B_VALUES)
    simulate.add_argument('--link', choices=('logistic', 'probit'), type=str.lower, default='logistic')
    return parser


def parse_config(argv: Optional[List[str]] = None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    fields = RunConfig.__dataclass_fields__
    return RunConfig(**{key: value for key, value in args.items() if key in fields})


def _write_outputs(config: RunConfig, response: Dict[str, Any]):
    if config.out is None:
        write_text(response['text'], stream=sys.stdout)
        return
    write_text(response['text'], config.out)
    if config.command == 'simulate':
        # the table projection and the full report always travel together
        other = 'json' if config.format == 'csv' else 'csv'
        companion = Path(config.out).with_suffix(f".{other}")
        if companion != Path(config.out):
            write_text(render('simulate', response['result'], other), companion)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        config = parse_config(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        level = config.log_level or setting('logging', 'level', 'INFO')
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logger.debug(f"Run configuration: {asdict(config)}")

    response = run_command(config)
    if response['success']:
        _write_outputs(config, response)
    else:
        print(f"error: {response['error']}", file=sys.stderr)
    return response['exit_code']


if __name__ == "__main__":
    sys.exit(main())
