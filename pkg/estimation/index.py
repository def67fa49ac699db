"""
Index coefficient estimation for the monotone single-index propensity model
pr(D = 1 | X = x) = pi(x'beta), ||beta|| = 1, first nonzero component positive.

Two estimators are provided: the slope direction of a logistic maximum
likelihood fit, and the simple score estimator, which searches the unit sphere
(through its spherical-coordinate parameterization) for an approximate zero
of the score built from the PAVA link fit at each candidate direction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import norm, qmc

from common.data_model import ObservationSet
from common.errors import (
    ConfigurationError,
    DimensionMismatch,
    NoDescent,
    NonConvergence,
    NumericalError,
    RankDeficient,
    Separation,
)
from estimation.isotonic import fit_propensity
from manager.settings import setting

logger = logging.getLogger("isopsm")

INDEX_METHODS = ('LOGISTIC-MLE', 'SSE', 'SUPPLIED')
SIGN_THRESHOLD = 1e-12
ANGLE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class SphericalPoint:
    """Angles (zeta_1..zeta_{d-1}); the first d-2 lie in [0, pi], the last in [0, 2 pi]."""

    zeta: np.ndarray

    def __post_init__(self):
        zeta = np.atleast_1d(np.asarray(self.zeta, dtype=float)).copy()
        if zeta.ndim != 1 or zeta.shape[0] < 1:
            raise DimensionMismatch("a spherical point needs at least one angle (d >= 2)")
        if not np.all(np.isfinite(zeta)):
            raise ConfigurationError("angles must be finite")
        inner, last = zeta[:-1], zeta[-1]
        if np.any(inner < -ANGLE_SLACK) or np.any(inner > np.pi + ANGLE_SLACK):
            raise ConfigurationError(f"inner angles must lie in [0, pi], got {inner}")
        if last < -ANGLE_SLACK or last > 2 * np.pi + ANGLE_SLACK:
            raise ConfigurationError(f"last angle must lie in [0, 2 pi], got {last}")
        zeta.setflags(write=False)
        object.__setattr__(self, 'zeta', zeta)

    @property
    def dim(self) -> int:
        return int(self.zeta.shape[0]) + 1


@dataclass(frozen=True, eq=False)
class LogisticFit:
    """Logistic regression of D on (1, X); coef[0] is the intercept."""

    coef: np.ndarray
    iterations: int
    loglik_trace: Tuple[float, ...]

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def slope(self) -> np.ndarray:
        return self.coef[1:]

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.slope

    def propensity(self, x: np.ndarray) -> np.ndarray:
        return expit(self.linear_predictor(x))


@dataclass(frozen=True, eq=False)
class IndexFit:
    beta: np.ndarray
    method: str
    objective_trace: Tuple[float, ...] = ()
    converged: bool = True
    logistic: Optional[LogisticFit] = field(default=None, repr=False)

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        if self.method not in INDEX_METHODS:
            raise ConfigurationError(f"unknown index method {self.method!r}")
        if abs(np.linalg.norm(beta) - 1.0) > 1e-12:
            raise ConfigurationError(f"index coefficient must have unit norm, got {np.linalg.norm(beta)}")
        leading = np.flatnonzero(np.abs(beta) > SIGN_THRESHOLD)
        if leading.size and beta[leading[0]] < 0:
            raise ConfigurationError("first nonzero component of the index must be positive")
        beta.setflags(write=False)
        object.__setattr__(self, 'beta', beta)

    @classmethod
    def supplied(cls, beta) -> 'IndexFit':
        return cls(beta=normalize_direction(beta), method='SUPPLIED')

    def to_dict(self):
        return {
            'beta': self.beta,
            'method': self.method,
            'converged': self.converged,
            'objective_trace': list(self.objective_trace),
        }


def normalize_direction(v) -> np.ndarray:
    """Unit vector with its first component above 1e-12 in magnitude made positive."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    length = np.linalg.norm(v)
    if not np.isfinite(length) or length == 0.0:
        raise RankDeficient("cannot normalize a zero or non-finite direction")
    v = v / length
    leading = np.flatnonzero(np.abs(v) > SIGN_THRESHOLD)
    if leading.size and v[leading[0]] < 0:
        v = -v
    # renormalize once more so the norm is exact to rounding
    return v / np.linalg.norm(v)


def angle_between(u, v) -> float:
    """Angle in radians between two directions, accurate near 0 and pi."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    return float(2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def _raw_angles(zeta) -> np.ndarray:
    if isinstance(zeta, SphericalPoint):
        return zeta.zeta
    return SphericalPoint(zeta).zeta


def _map(z: np.ndarray) -> np.ndarray:
    m = z.shape[0]
    prefix = np.concatenate([[1.0], np.cumprod(np.sin(z))])
    out = np.empty(m + 1)
    out[:m] = prefix[:m] * np.cos(z)
    out[m] = prefix[m]
    return out


def _jacobian(z: np.ndarray) -> np.ndarray:
    m = z.shape[0]
    sines, cosines = np.sin(z), np.cos(z)
    jac = np.zeros((m + 1, m))
    for i in range(m + 1):
        # component i is prod_{l<i} sin(z_l) times cos(z_i), or no cosine for the last one
        tail = cosines[i] if i < m else 1.0
        for k in range(min(i, m)):
            others = np.prod(np.delete(sines[:i], k))
            jac[i, k] = others * cosines[k] * tail
        if i < m:
            jac[i, i] = -np.prod(sines[:i]) * sines[i]
    return jac


def spherical_map(zeta) -> np.ndarray:
    return _map(_raw_angles(zeta))


def spherical_jacobian(zeta) -> np.ndarray:
    """d x (d - 1) matrix of partial derivatives of spherical_map."""
    return _jacobian(_raw_angles(zeta))


def angles_from_direction(beta) -> SphericalPoint:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape[0] < 2:
        raise DimensionMismatch("spherical coordinates need d >= 2")
    beta = beta / np.linalg.norm(beta)
    m = beta.shape[0] - 1
    z = np.empty(m)
    for k in range(m - 1):
        z[k] = np.arctan2(np.linalg.norm(beta[k + 1:]), beta[k])
    z[m - 1] = np.arctan2(beta[m], beta[m - 1]) % (2 * np.pi)
    return SphericalPoint(z)


def _canonical(z: np.ndarray) -> np.ndarray:
    """Angles of the hemisphere representative of the direction at z (any real angles)."""
    return angles_from_direction(normalize_direction(_map(np.asarray(z, dtype=float)))).zeta


def _separating(design: np.ndarray, d: np.ndarray, coef: np.ndarray) -> bool:
    """True when the linear predictor puts every treated unit strictly above every control."""
    eta = design @ coef
    return bool(np.max(eta[d == 0]) < np.min(eta[d == 1]))


def fit_logistic(data: ObservationSet, max_iter: Optional[int] = None, tol: Optional[float] = None,
                 separation_norm: Optional[float] = None) -> LogisticFit:
    """
    Newton-Raphson fit of the logistic regression of D on (1, X).

    Converges when the largest component of the average score is below `tol`
    or the Newton step vanishes; halves the step whenever the likelihood would
    decrease.
    """
    max_iter = max_iter or setting('index', 'newton_max_iter')
    tol = tol or setting('index', 'newton_tol')
    separation_norm = separation_norm or setting('index', 'separation_norm')

    design = np.column_stack([np.ones(data.n), data.x])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficient(f"design matrix with intercept has rank below {design.shape[1]}")
    d = data.d.astype(float)

    def loglik(c):
        eta = design @ c
        return float(np.sum(d * eta - np.logaddexp(0.0, eta)))

    coef = np.zeros(design.shape[1])
    current = loglik(coef)
    trace = [current]

    for iteration in range(max_iter + 1):
        prob = expit(design @ coef)
        if np.max(np.abs(d - prob)) < 1e-8:
            raise Separation("fitted probabilities reproduce the treatment indicator (perfect separation)")
        score = design.T @ (d - prob) / data.n
        if np.max(np.abs(score)) < tol:
            break
        if iteration == max_iter:
            if _separating(design, d, coef):
                raise Separation("linear predictor separates treated from control units")
            raise NonConvergence(f"logistic Newton-Raphson did not converge in {max_iter} iterations")

        weights = prob * (1.0 - prob)
        hessian = (design * weights[:, None]).T @ design / data.n
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            raise Separation("information matrix became singular (separation)")

        scale = 1.0
        for _ in range(50):
            candidate = coef + scale * step
            value = loglik(candidate)
            if value >= current - 1e-12 * max(1.0, abs(current)):
                break
            scale /= 2.0
        else:
            if _separating(design, d, coef):
                raise Separation("linear predictor separates treated from control units")
            raise NonConvergence("step halving failed to increase the likelihood")

        increment = np.max(np.abs(candidate - coef))
        coef, current = candidate, value
        trace.append(current)
        logger.debug(f"logistic iteration {iteration + 1}: loglik={current:.10g}, scale={scale}")

        if np.linalg.norm(coef) > separation_norm:
            raise Separation(f"coefficient norm exceeded {separation_norm:g} (separation)")
        if increment < 1e-12 * (1.0 + np.max(np.abs(coef))):
            break

    if _separating(design, d, coef):
        raise Separation("linear predictor separates treated from control units (complete separation)")
    return LogisticFit(coef=coef, iterations=len(trace) - 1, loglik_trace=tuple(trace))


def logistic_mle(data: ObservationSet, logistic: Optional[LogisticFit] = None) -> IndexFit:
    """
    Normalized slope of the logistic fit; the intercept is absorbed by the
    unknown monotone link. For d = 1 the index is (1).
    """
    fit = logistic or fit_logistic(data)
    beta = np.ones(1) if data.dim == 1 else normalize_direction(fit.slope)
    return IndexFit(beta=beta, method='LOGISTIC-MLE', objective_trace=fit.loglik_trace,
                    converged=True, logistic=fit)


def sse_objective(data: ObservationSet, zeta) -> np.ndarray:
    """Average of J(zeta)' X (D - pi_hat(X' S(zeta))) over the sample."""
    z = _raw_angles(zeta)
    if z.shape[0] != data.dim - 1:
        raise DimensionMismatch(f"{z.shape[0]} angles given for {data.dim} covariates")
    gamma = _map(z)
    step = fit_propensity(data, data.x @ gamma)
    order = step.perm.order
    residual = data.d[order] - step.fitted
    score = data.x[order].T @ residual / data.n
    return _jacobian(z).T @ score


def default_starts(data: ObservationSet, n_starts: Optional[int] = None,
                   logistic: Optional[LogisticFit] = None) -> List[SphericalPoint]:
    """Logistic-MLE direction followed by Halton quasi-random sphere points."""
    n_starts = n_starts or setting('index', 'sse_starts')
    if data.dim < 2:
        return []

    starts = []
    try:
        fit = logistic or fit_logistic(data)
        starts.append(angles_from_direction(normalize_direction(fit.slope)))
    except NumericalError as e:
        logger.warning(f"No logistic warm start for the SSE search: {e}")

    halton = qmc.Halton(d=data.dim, scramble=False)
    # the first Halton point is the origin, which maps to no direction
    for u in halton.random(2 * n_starts + 1)[1:]:
        if len(starts) >= n_starts:
            break
        v = norm.ppf(u)
        if np.linalg.norm(v) < SIGN_THRESHOLD:
            continue
        starts.append(angles_from_direction(normalize_direction(v)))
    return starts


def sse_fit(data: ObservationSet, starts: Optional[Sequence[SphericalPoint]] = None,
            tol_scale: Optional[float] = None, simplex_step: Optional[float] = None,
            maxiter: Optional[int] = None, logistic: Optional[LogisticFit] = None) -> IndexFit:
    """
    Simple score estimator of the index.

    Minimizes ||phi_n(zeta)||^2 with a Nelder-Mead simplex from every start
    (the score is discontinuous in zeta, so no gradient method applies) over
    the hemisphere of directions whose first nonzero component is positive.
    The best minimizer wins, ties going to the earlier start. `converged`
    reports whether ||phi_n|| <= tol_scale / sqrt(n).
    """
    if data.dim == 1:
        return IndexFit(beta=np.ones(1), method='SSE', converged=True)

    tol_scale = tol_scale if tol_scale is not None else setting('index', 'sse_tolerance_scale')
    simplex_step = simplex_step or setting('index', 'simplex_step')
    maxiter = maxiter or setting('index', 'simplex_maxiter')
    if starts is None:
        starts = default_starts(data, logistic=logistic)
    if not starts:
        raise ConfigurationError("the SSE search needs at least one start")

    def objective(z):
        value = sse_objective(data, _canonical(z))
        return float(value @ value)

    m = data.dim - 1
    best_value, best_z = np.inf, None
    trace = []
    descended = False
    for index, start in enumerate(starts):
        z0 = _canonical(_raw_angles(start))
        if z0.shape[0] != m:
            raise DimensionMismatch(f"start {index} has {z0.shape[0]} angles, expected {m}")
        initial = objective(z0)
        simplex = np.vstack([z0, z0 + simplex_step * np.eye(m)])
        result = minimize(objective, z0, method='Nelder-Mead',
                          options={'initial_simplex': simplex, 'xatol': 1e-8, 'fatol': 1e-16,
                                   'maxiter': maxiter * m, 'maxfev': 2 * maxiter * m})
        value = float(result.fun)
        trace.append(value)
        descended = descended or value < initial
        if value < best_value:
            best_value, best_z = value, np.asarray(result.x, dtype=float)

    tol = tol_scale / np.sqrt(data.n)
    if not descended and np.sqrt(best_value) > tol:
        raise NoDescent(f"none of {len(starts)} SSE starts reduced the score norm")

    beta = normalize_direction(_map(_canonical(best_z)))
    converged = bool(np.sqrt(best_value) <= tol)
    if not converged:
        logger.warning(f"SSE search ended at ||phi_n||={np.sqrt(best_value):.3g} above tolerance {tol:.3g}")
    return IndexFit(beta=beta, method='SSE', objective_trace=tuple(trace), converged=converged)
