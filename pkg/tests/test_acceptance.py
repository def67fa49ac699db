"""
Full-scale Monte Carlo checks against the published bias/RMSE tables.

These take minutes with parallel workers; run with `pytest --runslow`.
"""
import numpy as np
import pytest

from estimation.pipelines import DEFAULT_ESTIMATORS, EstimatorSpec, parse_estimators
from inference.bootstrap import bootstrap
from simulation.dgp import DgpConfig, generate, grid
from simulation.oracles import treated_fraction
from simulation.study import efficiency_check, run_study

pytestmark = pytest.mark.slow

R = 1000
N = 500

# (estimator, bias, rmse) for model 1, a = 1, b = 1
LOGISTIC_ANCHORS = [('PAVA-MLE', -0.167, 0.458), ('PAVA-SSE', -0.158, 0.468), ('PARA', -0.023, 1.063),
                    ('PSM-3', -0.482, 0.614), ('PSM-15', -1.117, 1.156)]
PROBIT_ANCHORS = [('PAVA-MLE', -0.114, 0.309), ('PSM-3', -1.624, 1.686)]


def tolerances(label):
    if label.startswith('PSM'):
        return 0.15, 0.15
    return 0.08, 0.12


@pytest.fixture(scope="module")
def logistic_report():
    return run_study(grid('logistic', n=N, seed=2024), parse_estimators(DEFAULT_ESTIMATORS), R=R)


@pytest.fixture(scope="module")
def probit_report():
    return run_study(grid('probit', n=N, seed=2024), parse_estimators(DEFAULT_ESTIMATORS), R=R)


@pytest.mark.parametrize("label, bias, rmse", LOGISTIC_ANCHORS)
def test_logistic_table_anchor(logistic_report, label, bias, rmse):
    cell = logistic_report.cell(DgpConfig(model=1, a=1, b=1, n=N), label)
    bias_tol, rmse_tol = tolerances(label)
    assert cell.bias == pytest.approx(bias, abs=bias_tol)
    assert cell.rmse == pytest.approx(rmse, abs=rmse_tol)


@pytest.mark.parametrize("label, bias, rmse", PROBIT_ANCHORS)
def test_probit_table_anchor(probit_report, label, bias, rmse):
    cell = probit_report.cell(DgpConfig(model=1, a=1, b=1, link='probit', n=N), label)
    bias_tol, rmse_tol = tolerances(label)
    assert cell.bias == pytest.approx(bias, abs=bias_tol)
    assert cell.rmse == pytest.approx(rmse, abs=rmse_tol)


def test_probit_model2_matching_anchor(probit_report):
    cell = probit_report.cell(DgpConfig(model=2, a=1, b=-1, link='probit', n=N), 'PSM-3')
    assert cell.bias == pytest.approx(1.054, abs=0.15)
    assert cell.rmse == pytest.approx(1.197, abs=0.15)


def test_parametric_plug_in_has_largest_rmse(logistic_report):
    for config in logistic_report.configs:
        rmse = {label: logistic_report.cell(config, label).rmse for label in logistic_report.estimators}
        assert max(rmse, key=rmse.get) == 'PARA', config.key


def test_matching_rmse_grows_with_m(logistic_report):
    config = DgpConfig(model=1, a=1, b=1, n=N)
    rmse = [logistic_report.cell(config, f"PSM-{m}").rmse for m in (3, 5, 10, 15)]
    assert rmse == sorted(rmse)


@pytest.mark.parametrize("link, published", [('logistic', 0.816), ('probit', 0.875)])
def test_treated_fraction_in_large_sample(link, published):
    data = generate(DgpConfig(link=link, n=1_000_000, seed=8))
    share = data.n1 / data.n
    exact = treated_fraction(DgpConfig(link=link)).value
    se = np.sqrt(exact * (1 - exact) / data.n)
    assert abs(share - exact) <= 3 * se
    # the published rates are rounded
    assert share == pytest.approx(published, abs=0.002)


def test_efficiency_bound_single_index_outcome():
    check = efficiency_check(DgpConfig(model=1, a=1, b=1, n=2000, seed=31), R=R)
    assert check.ratio == pytest.approx(1.0, abs=0.25)


@pytest.mark.xfail(reason="the control outcome depends on x1 off the propensity index, "
                          "so the single-index bound need not be attained", strict=False)
def test_efficiency_bound_model2():
    check = efficiency_check(DgpConfig(model=2, a=1, b=1, n=2000, seed=31), R=R)
    assert check.ratio == pytest.approx(1.0, abs=0.25)


def test_bootstrap_sd_matches_monte_carlo_sd():
    config = DgpConfig(model=1, a=1, b=1, n=N, seed=77)
    estimator = EstimatorSpec('pava-mle')
    study = run_study([config], [estimator], R=R, truths={config.key: 0.0})
    monte_carlo_sd = study.cell(config, 'PAVA-MLE').sd
    report = bootstrap(generate(config, 0), estimator, B=1000, seed=5)
    assert report.sd == pytest.approx(monte_carlo_sd, rel=0.2)
