"""
Simulation designs with two normal covariates.

    X1, X2 ~ N(0, 1),   pr(D = 1 | x) = pi(2 + x1 + x2)
    Y(1) = -(X1 + X2)^a + e1
    Y(0) = 3 h(X1, X2) - (X1 + b X2)^a + e0

with h = cos(x1 + b x2) (model 1) or h = x1 (model 2), pi the logistic or
probit link, and e1, e0 independent standard normal noise.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from common.data_model import ObservationSet
from common.errors import ConfigurationError
from estimation.estimators import LINKS
from manager.worker_pool import task_rng

MODELS = (1, 2)
POWERS = (1, 2)
B_VALUES = (1, 0, -1)
MIN_N = 10
INTERCEPT = 2.0


def _stable_hash(text: str) -> int:
    # python hash() is salted per process
    return int(hashlib.sha256(text.encode('utf-8')).hexdigest()[:16], 16)


@dataclass(frozen=True)
class DgpConfig:
    model: int = 1
    a: int = 1
    b: int = 1
    link: str = 'LOGISTIC'
    n: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'link', str(self.link).upper())
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.a not in POWERS:
            raise ConfigurationError(f"a must be one of {POWERS}, got {self.a!r}")
        if self.b not in B_VALUES:
            raise ConfigurationError(f"b must be one of {B_VALUES}, got {self.b!r}")
        if self.link not in LINKS:
            raise ConfigurationError(f"link must be one of {', '.join(l.lower() for l in LINKS)}, got {self.link!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < MIN_N:
            raise ConfigurationError(f"n must be an integer >= {MIN_N}, got {self.n!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")

    @property
    def key(self) -> str:
        """Design identity; excludes n and seed so truths are shared across sample sizes."""
        return f"model={self.model},a={self.a},b={self.b},link={self.link}"

    @property
    def config_hash(self) -> int:
        return _stable_hash(f"{self.key},n={self.n}")

    @property
    def design_hash(self) -> int:
        return _stable_hash(self.key)

    def with_n(self, n: int) -> 'DgpConfig':
        return replace(self, n=n)


@dataclass(frozen=True, eq=False)
class SimulatedSample:
    data: ObservationSet
    y1: np.ndarray
    y0: np.ndarray
    propensity: np.ndarray

    @property
    def sample_att(self) -> float:
        treated = self.data.d == 1
        return float(np.mean(self.y1[treated] - self.y0[treated]))


def grid(link: str = 'LOGISTIC', n: int = 500, seed: int = 0):
    """The twelve (model, a, b) designs for one link, in table order."""
    return [DgpConfig(model=model, a=a, b=b, link=link, n=n, seed=seed)
            for model in MODELS for a in POWERS for b in B_VALUES]


def linear_predictor(x: np.ndarray) -> np.ndarray:
    return INTERCEPT + x[:, 0] + x[:, 1]


def propensity(config: DgpConfig, x: np.ndarray) -> np.ndarray:
    return LINKS[config.link](linear_predictor(x))


def control_shift(config: DgpConfig, x: np.ndarray) -> np.ndarray:
    if config.model == 1:
        return np.cos(x[:, 0] + config.b * x[:, 1])
    return x[:, 0]


def mu1(config: DgpConfig, x: np.ndarray) -> np.ndarray:
    """E{Y(1) | X = x}."""
    return -(x[:, 0] + x[:, 1]) ** config.a


def mu0(config: DgpConfig, x: np.ndarray) -> np.ndarray:
    """E{Y(0) | X = x}."""
    return 3.0 * control_shift(config, x) - (x[:, 0] + config.b * x[:, 1]) ** config.a


def conditional_effect(config: DgpConfig, x: np.ndarray) -> np.ndarray:
    return mu1(config, x) - mu0(config, x)


def draw(config: DgpConfig, rng: np.random.Generator, n: int):
    """Covariates, both noise terms and treatment indicators for n units, in that draw order."""
    x = rng.standard_normal((n, 2))
    e1 = rng.standard_normal(n)
    e0 = rng.standard_normal(n)
    p = propensity(config, x)
    d = (rng.random(n) < p).astype(np.int64)
    return x, e1, e0, d, p


def generate_with_outcomes(config: DgpConfig, replicate: int = 0) -> SimulatedSample:
    """
    Replicate `replicate` of the design, keyed by (seed, config hash, replicate).

    Both potential outcomes are kept alongside the observed data.
    """
    rng = task_rng(config.seed, config.config_hash, replicate)
    x, e1, e0, d, p = draw(config, rng, config.n)
    y1 = mu1(config, x) + e1
    y0 = mu0(config, x) + e0
    y = np.where(d == 1, y1, y0)
    data = ObservationSet.from_arrays(y, d, x)
    return SimulatedSample(data=data, y1=y1, y0=y0, propensity=p)


def generate(config: DgpConfig, replicate: int = 0) -> ObservationSet:
    return generate_with_outcomes(config, replicate).data
