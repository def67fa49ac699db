import json

import numpy as np
import pytest
from scipy import integrate
from scipy.special import expit
from scipy.stats import norm

from common.errors import ConfigurationError, NotApplicable
from estimation.pipelines import EstimatorSpec
from simulation.dgp import DgpConfig, generate, generate_with_outcomes, grid
from simulation.oracles import (
    OracleValue,
    asymptotic_variance_oracle,
    sigma_mu,
    sigma_tau,
    treated_fraction,
    true_att,
)
from simulation.study import McCell, compare_links, index_angle, run_study

ORACLE_N = 1_000_000


def normal_expectation(f, scale):
    """E f(S) for S ~ N(0, scale^2)."""
    value, _ = integrate.quad(lambda s: f(s) * norm.pdf(s, scale=scale), -12 * scale, 12 * scale, limit=200)
    return value


class ConstantEstimator:
    def __init__(self, value, label='CONST'):
        self.value = value
        self.label = label

    def __call__(self, data):
        return self.value


def test_config_validation():
    assert DgpConfig(link='probit').link == 'PROBIT'
    for bad in ({'model': 3}, {'a': 3}, {'b': 2}, {'link': 'cloglog'}, {'n': 9}, {'seed': -1}):
        with pytest.raises(ConfigurationError):
            DgpConfig(**bad)


def test_grid_table_order():
    configs = grid('probit', n=100, seed=2)
    assert len(configs) == 12
    assert [(c.model, c.a, c.b) for c in configs[:3]] == [(1, 1, 1), (1, 1, 0), (1, 1, -1)]
    assert configs[-1].model == 2 and configs[-1].a == 2 and configs[-1].b == -1
    assert all(c.link == 'PROBIT' and c.n == 100 and c.seed == 2 for c in configs)


def test_config_hashes():
    config = DgpConfig(n=500)
    assert config.design_hash == config.with_n(1000).design_hash
    assert config.config_hash != config.with_n(1000).config_hash
    assert config.key == "model=1,a=1,b=1,link=LOGISTIC"


def test_generate_is_deterministic():
    config = DgpConfig(model=2, a=2, b=-1, n=200, seed=7)
    first, second = generate(config, 3), generate(config, 3)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.d, second.d)
    np.testing.assert_array_equal(first.x, second.x)
    assert not np.array_equal(first.y, generate(config, 4).y)


def test_generated_outcomes_follow_design():
    sample = generate_with_outcomes(DgpConfig(model=1, a=1, b=0, n=5000, seed=1))
    data = sample.data
    np.testing.assert_array_equal(data.y, np.where(data.d == 1, sample.y1, sample.y0))
    residual = sample.y1 + data.x[:, 0] + data.x[:, 1]
    assert abs(np.mean(residual)) < 0.1
    assert np.std(residual) == pytest.approx(1.0, abs=0.05)
    np.testing.assert_allclose(sample.propensity, expit(2 + data.x.sum(axis=1)))


@pytest.mark.parametrize("link, expected", [
    ('logistic', normal_expectation(lambda s: expit(2 + s), np.sqrt(2))),
    ('probit', norm.cdf(2 / np.sqrt(3))),
])
def test_treated_fraction(link, expected):
    eta = treated_fraction(DgpConfig(link=link), oracle_n=ORACLE_N)
    assert abs(eta.value - expected) <= 5 * eta.se
    if link == 'probit':
        assert eta.value == pytest.approx(0.875, abs=0.002)


def test_true_att_against_quadrature():
    # model 2, a = 1, b = 1: tau(x) = -3 x1 and E(X1 | X1 + X2 = s) = s / 2
    config = DgpConfig(model=2, a=1, b=1)
    weight = lambda s: expit(2 + s)
    expected = (-1.5 * normal_expectation(lambda s: weight(s) * s, np.sqrt(2))
                / normal_expectation(weight, np.sqrt(2)))
    truth = true_att(config, oracle_n=ORACLE_N)
    assert truth.se > 0
    assert abs(truth.value - expected) <= 5 * truth.se + 1e-4


def test_true_att_is_cached():
    config = DgpConfig(model=1, a=2, b=0)
    assert true_att(config, oracle_n=ORACLE_N) is true_att(config.with_n(2000), oracle_n=ORACLE_N)


def test_true_att_disk_cache(tmp_path, monkeypatch):
    import simulation.oracles as oracles

    monkeypatch.setattr(oracles, 'setting', lambda section, key, default=None: {
        ('oracle', 'cache_dir'): str(tmp_path), ('oracle', 'seed'): 97, ('oracle', 'chunk'): 500_000,
    }.get((section, key), default))
    monkeypatch.setattr(oracles, '_truth_cache', {})
    config = DgpConfig(model=2, a=2, b=0)
    value = oracles.true_att(config, oracle_n=ORACLE_N)

    stored = json.loads((tmp_path / f"truths-v{oracles.ORACLE_VERSION}.json").read_text())
    assert len(stored) == 1
    monkeypatch.setattr(oracles, '_truth_cache', {})
    assert oracles.true_att(config, oracle_n=ORACLE_N) == value


def test_sigma_mu_closed_form():
    # E{1 / expit(2 + S)} = 1 + exp(-2) E exp(-S) = 1 + exp(-1), and Var(X1 + X2) = 2
    value = sigma_mu(DgpConfig(model=1, a=1, b=1), oracle_n=ORACLE_N)
    assert value.value == pytest.approx(3.0 + np.exp(-1.0), abs=0.01)


def test_sigma_tau():
    value = sigma_tau(DgpConfig(model=1, a=1, b=1), oracle_n=ORACLE_N)
    assert np.isfinite(value.value) and value.value > 0
    assert asymptotic_variance_oracle(DgpConfig(model=1, a=1, b=1), 'sigma_tau', ORACLE_N) == value
    with pytest.raises(NotApplicable):
        sigma_tau(DgpConfig(b=0), oracle_n=ORACLE_N)
    with pytest.raises(ConfigurationError):
        sigma_tau(DgpConfig(), oracle_n=1000)
    with pytest.raises(ConfigurationError):
        asymptotic_variance_oracle(DgpConfig(), 'sigma_x', ORACLE_N)


@pytest.mark.parametrize("b, degrees", [(1, 0.0), (0, 45.0), (-1, 90.0)])
def test_index_angle(b, degrees):
    assert index_angle(b) == pytest.approx(degrees, abs=1e-9)


def test_mc_cell_rejects_inconsistent_rmse():
    with pytest.raises(ArithmeticError):
        McCell(model=1, a=1, b=1, link='LOGISTIC', n=100, estimator='X', bias=1.0, rmse=0.5, sd=0.1,
               bias_se=0.01, replicates=10, failed=0, true_att=0.0)


def test_run_study_with_exact_estimator():
    configs = grid('logistic', n=50, seed=0)[:2]
    truths = {config.key: 1.5 for config in configs}
    report = run_study(configs, [ConstantEstimator(1.5)], R=5, workers=1, truths=truths)
    for config in configs:
        cell = report.cell(config, 'CONST')
        assert cell.bias == 0.0
        assert cell.rmse == 0.0
        assert cell.replicates == 5
    assert report.metadata['R'] == 5
    assert report.metadata['oracle_version'] == 2


def test_run_study_statistics():
    config = DgpConfig(model=1, a=1, b=1, n=200, seed=3)
    estimators = [EstimatorSpec('pava-mle'), EstimatorSpec('psm', M=3)]
    report = run_study([config], estimators, R=8, workers=1, truths={config.key: -1.0})
    values = report.estimates[(config.key, 200)]
    assert values.shape == (8, 2)
    for column, label in enumerate(['PAVA-MLE', 'PSM-3']):
        cell = report.cell(config, label)
        ok = values[:, column][np.isfinite(values[:, column])]
        errors = ok + 1.0
        assert cell.bias == pytest.approx(np.mean(errors), abs=1e-12)
        assert cell.rmse ** 2 == pytest.approx(cell.bias ** 2 + np.var(ok), abs=1e-10)
        assert cell.replicates + cell.failed == 8


def test_run_study_is_reproducible():
    config = DgpConfig(n=100)
    kwargs = dict(R=4, workers=1, truths={config.key: 0.0}, master_seed=11)
    first = run_study([config], [EstimatorSpec('pava-mle')], **kwargs)
    second = run_study([config], [EstimatorSpec('pava-mle')], **kwargs)
    assert first.to_json() == second.to_json()
    assert first.to_csv() == second.to_csv()
    assert first.configs[0].seed == 11


def test_run_study_report_layouts(tmp_path):
    configs = grid('logistic', n=60, seed=0)[:2]
    report = run_study(configs, [EstimatorSpec('pava-mle'), ConstantEstimator(0.0)], R=3, workers=1,
                       truths={c.key: 0.0 for c in configs})
    frame = report.to_frame()
    assert list(frame.columns) == ['link', 'model', 'a', 'b', 'n', 'statistic', 'PAVA-MLE', 'CONST']
    assert list(frame['statistic']) == ['Bias', 'RMSE', 'Bias', 'RMSE']
    assert len(report.replicate_frame()) == 2 * 3 * 2

    report.to_csv(tmp_path / 'table.csv')
    report.to_json(tmp_path / 'table.json')
    assert (tmp_path / 'table.csv').read_text().startswith('link,model,a,b,n,statistic')
    parsed = json.loads((tmp_path / 'table.json').read_text())
    assert len(parsed['cells']) == 4


def test_run_study_rejects_bad_arguments():
    config = DgpConfig(n=50)
    with pytest.raises(ConfigurationError):
        run_study([config], [ConstantEstimator(0.0)], R=1, truths={config.key: 0.0})
    with pytest.raises(ConfigurationError):
        run_study([config], [ConstantEstimator(0.0), ConstantEstimator(1.0)], R=2, truths={config.key: 0.0})
    with pytest.raises(ConfigurationError):
        run_study([], [ConstantEstimator(0.0)], R=2)


def test_compare_links():
    logistic = run_study([DgpConfig(n=50)], [ConstantEstimator(1.0)], R=2, workers=1,
                         truths={DgpConfig().key: 0.0})
    probit = run_study([DgpConfig(n=50, link='probit')], [ConstantEstimator(2.0)], R=2, workers=1,
                       truths={DgpConfig(link='probit').key: 0.0})
    frame = compare_links(logistic, probit)
    assert len(frame) == 1
    assert frame['relative_change'].iloc[0] == pytest.approx(1.0)


def test_oracle_value_serializes():
    assert OracleValue(1.0, 0.1, 10).to_dict() == {'value': 1.0, 'se': 0.1, 'oracle_n': 10}
