import csv
import json

import numpy as np
import pytest

from src.errors import CacheError
from src.extractor import CapacitanceExtractor
from src.report import (
    format_telemetry,
    normalized_db,
    write_capacitance_csv,
    write_error_report,
    write_results,
)
from src.solver import SolverConfig

from conftest import block_voxels, make_structure


@pytest.fixture(scope="module")
def result():
    structure = make_structure({3: [[0, 0, 0]], 8: [[2, 0, 0]]}, [(2.0, block_voxels((3, 1, 1)))])
    return CapacitanceExtractor(SolverConfig(tucker_tol=1e-10)).run(structure)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_capacitance_csv(tmp_path, result):
    rows = read_rows(write_capacitance_csv(tmp_path / "c.csv", result))
    assert rows[0] == ["conductor", "3", "8"]
    assert [r[0] for r in rows[1:]] == ["3", "8"]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    np.testing.assert_allclose(values, result.capacitance, rtol=1e-8)


def test_write_results(tmp_path, result):
    written = write_results(tmp_path, result)
    assert set(written) == {"capacitance", "charges", "db_3", "db_8", "json", "text"}

    charges = read_rows(written["charges"])
    assert charges[0][-2:] == ["charge_3", "charge_8"]
    assert len(charges) == len(result.panels) + 1
    kinds = {row[6] for row in charges[1:]}
    assert kinds == {"conductor", "dielectric"}

    db = read_rows(written["db_8"])
    values = [float(row[-1]) for row in db[1:]]
    assert max(values) == 0.0
    assert all(v <= 0.0 for v in values)

    telemetry = json.loads((tmp_path / "telemetry.json").read_text(encoding="utf-8"))
    assert telemetry["fft"]["forward_per_mvm"] == 3
    assert "运行报告" in (tmp_path / "telemetry.txt").read_text(encoding="utf-8")


def test_normalized_db():
    db = normalized_db(np.array([-2.0, 1.0, 0.2, 0.0]))
    assert db.dtype == np.float32
    assert db[0] == 0.0
    assert db[1] == pytest.approx(-6.0206, abs=1e-3)
    assert db[2] == pytest.approx(-20.0, abs=1e-4)
    assert db[3] == -np.inf
    assert np.all(normalized_db(np.zeros(3)) == -np.inf)


def test_format_telemetry_lists_stages(result):
    text = format_telemetry(result.telemetry)
    for stage in result.telemetry["stages"]:
        assert stage in text
    assert "CR =" in text
    assert "CO =" in text


def test_error_report(tmp_path):
    path = write_error_report(tmp_path, CacheError("校验失败"))
    report = json.loads(open(path, encoding="utf-8").read())
    assert report == {"type": "CacheError", "message": "校验失败", "exit_code": 4}

    path = write_error_report(tmp_path / "other", RuntimeError("boom"), exit_code=1)
    report = json.loads(open(path, encoding="utf-8").read())
    assert report["type"] == "RuntimeError"
    assert report["exit_code"] == 1
