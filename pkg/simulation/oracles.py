"""
Ground truth for the simulation designs by large-sample Monte Carlo
integration over the covariate law.

Every quantity is an expectation over X ~ N(0, I_2) of closed-form functions
of x (propensity, conditional means, unit noise variances), so only X is
drawn; treatment and noise are integrated out exactly. Draws come in chunks,
chunk c from the stream keyed by (oracle seed, design hash, c).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from common.errors import ConfigurationError, NotApplicable, NumericalOverflow
from manager.settings import setting
from manager.worker_pool import task_rng
from simulation.dgp import DgpConfig, conditional_effect, mu1, propensity

logger = logging.getLogger("isopsm")

# bump when the oracle definition changes; cached truths of other versions are ignored
ORACLE_VERSION = 2
MIN_ORACLE_N = 1_000_000
VARIANCE_TARGETS = ('SIGMA_MU', 'SIGMA_TAU')

_truth_cache: Dict[Tuple, 'OracleValue'] = {}


@dataclass(frozen=True)
class OracleValue:
    value: float
    se: float
    oracle_n: int

    def to_dict(self):
        return {'value': self.value, 'se': self.se, 'oracle_n': self.oracle_n}


def _oracle_options(oracle_n: Optional[int], seed: Optional[int]) -> Tuple[int, int]:
    oracle_n = int(oracle_n if oracle_n is not None else setting('oracle', 'n'))
    seed = int(seed if seed is not None else setting('oracle', 'seed'))
    if oracle_n < MIN_ORACLE_N:
        raise ConfigurationError(f"oracle_n must be at least {MIN_ORACLE_N}, got {oracle_n}")
    return oracle_n, seed


def covariate_chunks(config: DgpConfig, oracle_n: int, seed: int,
                     chunk: Optional[int] = None) -> Iterator[np.ndarray]:
    chunk = int(chunk or setting('oracle', 'chunk'))
    for index, start in enumerate(range(0, oracle_n, chunk)):
        size = min(chunk, oracle_n - start)
        yield task_rng(seed, config.design_hash, index).standard_normal((size, 2))


class _Moments:
    """Running sums for means, variances and one cross moment."""

    def __init__(self, names):
        self.count = 0
        self.sums = {name: 0.0 for name in names}
        self.squares = {name: 0.0 for name in names}
        self.cross = 0.0

    def add(self, cross=None, **columns):
        self.count += next(iter(columns.values())).shape[0]
        for name, values in columns.items():
            self.sums[name] += float(np.sum(values))
            self.squares[name] += float(np.sum(values * values))
        if cross is not None:
            self.cross += float(np.sum(cross))

    def mean(self, name) -> float:
        return self.sums[name] / self.count

    def var(self, name) -> float:
        return max(self.squares[name] / self.count - self.mean(name) ** 2, 0.0)


def _cache_file() -> Optional[Path]:
    directory = setting('oracle', 'cache_dir', '')
    if not directory:
        return None
    return Path(directory) / f"truths-v{ORACLE_VERSION}.json"


def _read_disk_cache(key: str) -> Optional[OracleValue]:
    path = _cache_file()
    if path is None or not path.exists():
        return None
    try:
        entry = json.loads(path.read_text(encoding='utf-8')).get(key)
    except json.JSONDecodeError:
        logger.warning(f"Ignoring unreadable oracle cache {path}")
        return None
    return OracleValue(**entry) if entry else None


def _write_disk_cache(key: str, value: OracleValue):
    path = _cache_file()
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = json.loads(path.read_text(encoding='utf-8')) if path.exists() else {}
    entries[key] = value.to_dict()
    path.write_text(json.dumps(entries, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def true_att(config: DgpConfig, oracle_n: Optional[int] = None, seed: Optional[int] = None) -> OracleValue:
    """
    tau = E{pi(X) tau(X)} / E{pi(X)}, the treated-population mean of the
    conditional effect, with its delta-method Monte Carlo standard error.

    Results are cached per (design, oracle_n, seed, version), in memory and,
    when `[oracle] cache_dir` is set, on disk.
    """
    oracle_n, seed = _oracle_options(oracle_n, seed)
    cache_key = f"{config.key},oracle_n={oracle_n},seed={seed}"
    memory_key = (ORACLE_VERSION, cache_key)
    if memory_key in _truth_cache:
        return _truth_cache[memory_key]
    cached = _read_disk_cache(cache_key)
    if cached is not None:
        _truth_cache[memory_key] = cached
        return cached

    moments = _Moments(('weighted', 'p'))
    for x in covariate_chunks(config, oracle_n, seed):
        p = propensity(config, x)
        weighted = p * conditional_effect(config, x)
        moments.add(weighted=weighted, p=p, cross=weighted * p)

    eta = moments.mean('p')
    tau = moments.mean('weighted') / eta
    covariance = moments.cross / moments.count - moments.mean('weighted') * eta
    linearized = moments.var('weighted') - 2.0 * tau * covariance + tau ** 2 * moments.var('p')
    se = float(np.sqrt(max(linearized, 0.0) / oracle_n) / eta)

    value = OracleValue(value=float(tau), se=se, oracle_n=oracle_n)
    logger.info(f"True ATT for {config.key}: {value.value:.6f} (SE {value.se:.2g}, {oracle_n} draws)")
    _truth_cache[memory_key] = value
    _write_disk_cache(cache_key, value)
    return value


def treated_fraction(config: DgpConfig, oracle_n: Optional[int] = None,
                     seed: Optional[int] = None) -> OracleValue:
    """eta = pr(D = 1) = E{pi(X)}."""
    oracle_n, seed = _oracle_options(oracle_n, seed)
    moments = _Moments(('p',))
    for x in covariate_chunks(config, oracle_n, seed):
        moments.add(p=propensity(config, x))
    return OracleValue(value=moments.mean('p'), se=float(np.sqrt(moments.var('p') / oracle_n)),
                       oracle_n=oracle_n)


def sigma_mu(config: DgpConfig, oracle_n: Optional[int] = None, seed: Optional[int] = None) -> OracleValue:
    """sigma_mu^2 = E{sigma_1^2(X) / pi(X)} + Var{mu_1(X)}, with sigma_1^2 = 1."""
    oracle_n, seed = _oracle_options(oracle_n, seed)
    moments = _Moments(('inverse', 'mu1'))
    for x in covariate_chunks(config, oracle_n, seed):
        moments.add(inverse=1.0 / propensity(config, x), mu1=mu1(config, x))
    value = moments.mean('inverse') + moments.var('mu1')
    se = np.sqrt((moments.var('inverse') + moments.var('mu1')) / oracle_n)
    return OracleValue(value=float(value), se=float(se), oracle_n=oracle_n)


def sigma_tau(config: DgpConfig, oracle_n: Optional[int] = None, seed: Optional[int] = None) -> OracleValue:
    """
    sigma_tau^2 = E[pi(X) {tau(X) - tau}^2 + pi(X) sigma_1^2(X)
                    + pi(X)^2 sigma_0^2(X) / {1 - pi(X)}] / eta^2

    Only defined when the control outcome depends on X through the
    propensity index direction, that is b = 1.
    """
    if config.b != 1:
        raise NotApplicable(f"sigma_tau needs b = 1 (outcome index along the propensity index), "
                            f"got b = {config.b}")
    oracle_n, seed = _oracle_options(oracle_n, seed)
    tau = true_att(config, oracle_n, seed).value

    moments = _Moments(('integrand', 'p'))
    for x in covariate_chunks(config, oracle_n, seed):
        p = propensity(config, x)
        with np.errstate(divide='ignore'):
            integrand = p * (conditional_effect(config, x) - tau) ** 2 + p + p ** 2 / (1.0 - p)
        if not np.all(np.isfinite(integrand)):
            raise NumericalOverflow("propensity reached 1 in the oracle draws; sigma_tau is not finite")
        moments.add(integrand=integrand, p=p)

    eta = moments.mean('p')
    value = moments.mean('integrand') / eta ** 2
    se = np.sqrt(moments.var('integrand') / oracle_n) / eta ** 2
    return OracleValue(value=float(value), se=float(se), oracle_n=oracle_n)


def asymptotic_variance_oracle(config: DgpConfig, which: str = 'SIGMA_TAU', oracle_n: Optional[int] = None,
                               seed: Optional[int] = None) -> OracleValue:
    which = which.upper()
    if which == 'SIGMA_MU':
        return sigma_mu(config, oracle_n, seed)
    if which == 'SIGMA_TAU':
        return sigma_tau(config, oracle_n, seed)
    raise ConfigurationError(f"unknown variance target {which!r}; valid: {', '.join(VARIANCE_TARGETS)}")
