"""Tests for the analysis report."""

import json

import numpy as np
import pytest

from sninference import __version__
from sninference.errors import DomainError
from sninference.report import AnalysisReport, jsonable


def test_jsonable():
    converted = jsonable({"a": np.float64("nan"), "b": (np.int64(3), np.inf), 1: np.array([[1.0, 2.0]]), "c": np.bool_(True)})
    assert converted == {"a": "nan", "b": [3, "inf"], "1": [[1.0, 2.0]], "c": True}


def test_add_pvalue():
    report = AnalysisReport("sn-test")
    report.add_pvalue("sn", np.float64(0.25))
    assert report.pvalues == {"sn": 0.25}
    with pytest.raises(DomainError):
        report.add_pvalue("sn", 1.5)


def test_json_is_canonical():
    report = AnalysisReport("cp-test", arguments={"seed": 1, "gamma": None}, results={"statistic": 3.5})
    report.warn("skipped 2 breaks")
    text = report.to_json()
    assert text.endswith("\n")
    assert text == AnalysisReport("cp-test", {"seed": 1, "gamma": None}, results={"statistic": 3.5}, warnings=["skipped 2 breaks"]).to_json()
    document = json.loads(text)
    assert document["version"] == __version__
    assert "timings" not in document
    assert list(document) == sorted(document)


def test_timings_on_request():
    report = AnalysisReport("sn-test", timings={"compute": 0.5})
    assert report.to_document()["timings"] == {"compute": 0.5}
