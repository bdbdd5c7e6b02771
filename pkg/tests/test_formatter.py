"""Tests for formatter module."""

import json

import numpy as np

from churn_compass.core import bundle_from_arrays
from churn_compass.formatter import ChoiceFormatter, ReportFormatter
from churn_compass.metrics import flip_decomposition
from churn_compass.models import ChoiceVector, ScoreKind


def test_format_float_six_significant_digits():
    assert ReportFormatter.format_float(0.123456789) == 0.123457
    assert ReportFormatter.format_float(123456789.0) == 123457000.0


def test_normalize_handles_numpy_and_enums():
    report = {
        "kind": ScoreKind.CONF,
        "count": np.int64(3),
        "flag": np.bool_(True),
        "values": np.array([0.5, 1.0 / 3.0]),
        "ids": {2, 1},
    }
    out = ReportFormatter.normalize(report)
    assert out == {"kind": "conf", "count": 3, "flag": True, "values": [0.5, 0.333333], "ids": [1, 2]}


def test_to_json_is_sorted_and_stable():
    bundle = bundle_from_arrays([[2.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]], [0, 1])
    text = ReportFormatter.to_json(flip_decomposition(bundle))
    data = json.loads(text)
    assert list(data) == sorted(data)
    assert data["negative_flips"] == 1
    assert text == ReportFormatter.to_json(flip_decomposition(bundle))


def test_to_csv():
    text = ReportFormatter.to_csv(("a", "b", "c"), [(1, 0.25, True), (2, 1.0 / 3.0, False)])
    assert text == "a,b,c\n1,0.25,1\n2,0.333333,0\n"


def test_choice_csv():
    bundle = bundle_from_arrays([[2.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 3.0]], [0, 1])
    text = ChoiceFormatter.to_csv(bundle, ChoiceVector([False, True]), {"avgconf_base": np.array([0.9, 0.1])})
    lines = text.splitlines()
    assert lines[0] == "index,choice,conf_base,conf_new,pred_base,pred_new,label,avgconf_base"
    assert lines[1].startswith("0,base,")
    assert lines[2].startswith("1,new,")
    assert lines[2].endswith(",1,1,1,0.1")


if __name__ == "__main__":
    test_format_float_six_significant_digits()
    test_normalize_handles_numpy_and_enums()
    test_to_json_is_sorted_and_stable()
    test_to_csv()
    test_choice_csv()

    print("✅ All formatter tests passed!")
