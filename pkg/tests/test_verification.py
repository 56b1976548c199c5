import numpy as np
import pytest

from src.geometry import build_grid
from src.kernel import PanelPairGeometry, potential_integral
from src.verification import (
    SUITES,
    point_rectangle_field,
    point_rectangle_potential,
    random_structure,
    reference_potential,
    run_verification,
)


def test_point_rectangle_potential_far_field():
    lo, hi = np.zeros(3), np.array([1.0, 1.0, 0.0])
    point = np.array([0.5, 0.5, 100.0])
    assert point_rectangle_potential(point, lo, hi, 2) == pytest.approx(1.0 / 100.0, rel=1e-4)


@pytest.mark.parametrize("point", [[0.3, -0.2, 0.7], [1.4, 0.5, -0.3], [0.2, 0.9, 0.0]])
def test_point_rectangle_field_is_gradient(point):
    lo, hi = np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.5, 0.0])
    point = np.array(point)
    h = 1e-5
    for axis in range(3):
        if axis == 2 and point[2] == 0.0:
            continue
        step = np.zeros(3)
        step[axis] = h
        fd = (point_rectangle_potential(point + step, lo, hi, 2)
              - point_rectangle_potential(point - step, lo, hi, 2)) / (2 * h)
        assert point_rectangle_field(point, lo, hi, 2, axis) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_reference_potential_matches_closed_form():
    pair = PanelPairGeometry.from_centers(2, [0.3, 1.7, 2.0], 2, [0.0, 0.0, 0.0])
    assert reference_potential(pair) == pytest.approx(potential_integral(pair, near_threshold=1e9), rel=1e-8)


def test_random_structure_is_valid(rng):
    for _ in range(5):
        structure = random_structure(rng)
        grid = build_grid(structure.normalized())
        assert 1 <= grid.n_conductors <= 2
        assert max(grid.dims) <= 4


@pytest.mark.parametrize("suite", [
    "scaling",
    "conjugation",
    "fft_count",
    "tucker_roundtrip",
    "cache_checksum",
    "dense_equivalence",
    "decompression_overhead",
])
def test_quick_suites_pass(suite):
    report = run_verification("quick", seed=3, suites=[suite])
    outcome = report["suites"][suite]
    assert outcome["passed"], outcome
    assert report["passed"]
    assert outcome["seconds"] >= 0.0


@pytest.mark.slow
@pytest.mark.parametrize("suite", ["kernel_oracle", "preconditioner_ordering", "coated_sphere",
                                   "compression_scaling", "high_permittivity"])
def test_slow_suites_pass(suite):
    report = run_verification("quick", seed=0, suites=[suite])
    assert report["suites"][suite]["passed"], report["suites"][suite]


def test_cache_checksum_checks_installed_cache(tmp_path):
    from src.kernel_cache import install_cache

    install_cache(tmp_path, dims_class=1, tol=1e-8)
    report = run_verification("quick", cache_dir=tmp_path, suites=["cache_checksum"])
    installed = report["suites"]["cache_checksum"]["installed"]
    assert set(installed.values()) == {"ok"}


def test_failing_suite_is_reported(monkeypatch):
    def broken(rng, sizes):
        raise RuntimeError("boom")

    monkeypatch.setitem(SUITES, "scaling", broken)
    progress = []
    report = run_verification("quick", suites=["scaling", "conjugation"],
                              progress_callback=lambda p, m: progress.append(p))
    assert not report["passed"]
    assert "boom" in report["suites"]["scaling"]["error"]
    assert report["suites"]["conjugation"]["passed"]
    assert progress[-1] == 100


@pytest.mark.parametrize("kwargs", [{"level": "exhaustive"}, {"suites": ["nonsense"]}])
def test_invalid_arguments(kwargs):
    with pytest.raises(ValueError):
        run_verification(**kwargs)
