import json

import pytest

from src.cli import RunConfig, build_parser, main, parse_params
from src.config import HIGH_ACCURACY_RRE
from src.structure_loader import structure_to_dict

from conftest import block_voxels, make_structure


@pytest.fixture
def structure_file(tmp_path):
    structure = make_structure({1: [[1, 1, 1]], 2: [[3, 1, 1]]}, [(2.5, block_voxels((5, 3, 3)))])
    path = tmp_path / "pair.json"
    path.write_text(json.dumps(structure_to_dict(structure)), encoding="utf-8")
    return path


def test_extract(structure_file, tmp_path, capsys):
    output = tmp_path / "out"
    code = main(["extract", str(structure_file), "-o", str(output), "--no-cache", "--rre", "1e-6"])
    assert code == 0
    assert (output / "capacitance.csv").exists()
    assert (output / "telemetry.json").exists()
    assert not (output / "error.json").exists()
    assert "电容矩阵" in capsys.readouterr().out

    telemetry = json.loads((output / "telemetry.json").read_text(encoding="utf-8"))
    # extract 不使用随机数，遥测中不应出现种子
    assert "seed" not in telemetry
    assert telemetry["memory"]["preconditioner"]["bytes_conventional"] > 0


def test_extract_not_converged(structure_file, tmp_path):
    output = tmp_path / "out"
    code = main(["extract", str(structure_file), "-o", str(output), "--no-cache",
                 "--preconditioner", "none", "--rre", "1e-12", "--max-iterations", "1"])
    assert code == 3
    report = json.loads((output / "error.json").read_text(encoding="utf-8"))
    assert report["type"] == "SolverError"
    # 未收敛时仍写出结果文件
    assert (output / "capacitance.csv").exists()


def test_extract_invalid_structure(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"voxel_size": 1.0, "conductors": []}), encoding="utf-8")
    output = tmp_path / "out"
    assert main(["extract", str(path), "-o", str(output)]) == 2
    report = json.loads((output / "error.json").read_text(encoding="utf-8"))
    assert report["type"] == "StructureError"
    assert report["exit_code"] == 2


def test_extract_missing_file(tmp_path):
    output = tmp_path / "out"
    assert main(["extract", str(tmp_path / "none.json"), "-o", str(output)]) == 2
    assert (output / "error.json").exists()


def test_extract_invalid_solver_option(structure_file, tmp_path):
    assert main(["extract", str(structure_file), "-o", str(tmp_path / "out"), "--rre", "2"]) == 2


def test_install_cache(tmp_path, capsys):
    cache_dir = tmp_path / "cache"
    assert main(["install-cache", "--cache-dir", str(cache_dir), "--dims", "2"]) == 0
    assert (cache_dir / "Axx.tkr").exists()
    assert "生成 15 个" in capsys.readouterr().out


def test_install_cache_from_environment(tmp_path, monkeypatch):
    cache_dir = tmp_path / "env-cache"
    monkeypatch.setenv("TOCAP_CACHE_DIR", str(cache_dir))
    assert main(["install-cache", "--dims", "1"]) == 0
    assert (cache_dir / "Bzz.tkr").exists()


def test_verify(tmp_path, capsys):
    report_path = tmp_path / "verify.json"
    assert main(["verify", "--suite", "scaling", "-o", str(report_path)]) == 0
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["passed"]
    assert "PASS" in capsys.readouterr().out


def test_verify_failure_exit_code(monkeypatch):
    from src import verification

    monkeypatch.setitem(verification.SUITES, "scaling", lambda rng, sizes: {"passed": False})
    assert main(["verify", "--suite", "scaling"]) == 5


def test_presets_list_and_export(tmp_path, capsys):
    assert main(["presets"]) == 0
    assert "coated-sphere" in capsys.readouterr().out

    target = tmp_path / "cube.json"
    assert main(["presets", "--export", "coated-cube", "--param", "edge=2", "-o", str(target)]) == 0
    document = json.loads(target.read_text(encoding="utf-8"))
    assert document["name"] == "coated-cube"


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "ToCap" in capsys.readouterr().out


def test_run_config_from_args():
    args = build_parser().parse_args(
        ["extract", "--preset", "coated-cube", "--param", "edge=4", "--high-accuracy",
         "--box-dims", "2", "3", "4", "--no-compress", "--no-cache"])
    run = RunConfig.from_args(args)
    assert run.preset == "coated-cube"
    assert run.preset_params == {"edge": 4}
    assert run.solver.rre == HIGH_ACCURACY_RRE
    assert run.solver.box_dims == (2, 3, 4)
    assert run.solver.compress_circulants is False
    assert run.use_cache is False


def test_parse_params():
    assert parse_params(["a=1", "b=2.5", "c=hello", "d=[1, 2]"]) == {"a": 1, "b": 2.5, "c": "hello", "d": [1, 2]}
    with pytest.raises(ValueError):
        parse_params(["novalue"])
