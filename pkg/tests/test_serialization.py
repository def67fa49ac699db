import json

import numpy as np

from common.serialization import dumps_report, make_json_serializable


def test_report_keeps_estimator_order():
    labels = ['PAVA-MLE', 'PAVA-SSE', 'PARA', 'PSM-3', 'PSM-5', 'PSM-10', 'PSM-15']
    report = {'estimates': {label: {'value': float(i)} for i, label in enumerate(labels)}}
    text = dumps_report(report)
    assert list(json.loads(text)['estimates']) == labels
    assert text.index('"PAVA-MLE"') < text.index('"PARA"')


def test_report_is_deterministic():
    report = {'n': np.int64(3), 'beta': np.array([0.6, 0.8]), 'value': 0.1 + 0.2}
    assert dumps_report(report) == dumps_report(dict(report))
    assert json.loads(dumps_report(report))['value'] == 0.1 + 0.2


def test_non_finite_values_become_null():
    converted = make_json_serializable({'bias': float('nan'), 'values': np.array([1.0, np.inf])})
    assert converted == {'bias': None, 'values': [1.0, None]}
