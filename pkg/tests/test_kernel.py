import numpy as np
import pytest

from src.config import EPS0
from src.errors import KernelContractError
from src.kernel import (
    FOUR_PI_EPS0,
    DielectricJump,
    PanelPairGeometry,
    diagonal_entry,
    efield_integral,
    efield_integral_orthogonal,
    efield_integral_parallel,
    interaction_values,
    potential_integral,
)
from src.verification import reference_field, reference_potential, touching_pairs

CLOSED = 1e9


def pair(obs_axis, obs_center, src_axis, src_center=(0.0, 0.0, 0.0), edge=1.0):
    return PanelPairGeometry.from_centers(obs_axis, obs_center, src_axis, src_center, edge)


def test_self_potential_of_unit_square():
    # ∫∫∫∫ 1/|r − r'| 在单位正方形上的闭式值
    expected = 4.0 * np.log(1.0 + np.sqrt(2.0)) + 4.0 * (1.0 - np.sqrt(2.0)) / 3.0
    value = potential_integral(pair(2, [0, 0, 0], 2)) * FOUR_PI_EPS0
    assert value == pytest.approx(expected, rel=1e-9)


def test_configuration():
    assert pair(2, [0, 0, 0], 2).configuration == "identical"
    assert pair(2, [0, 0, 1], 2).configuration == "parallel"
    assert pair(0, [1, 0, 0], 2).configuration == "orthogonal"


@pytest.mark.parametrize("obs_axis, center, src_axis", [
    (2, [0.3, -0.2, 1.0], 2),
    (2, [2.0, 0.0, 0.0], 2),
    (0, [1.2, 0.3, 0.4], 2),
    (1, [0.5, 0.5, 0.0], 0),
    (0, [7.0, 1.0, -2.0], 1),
])
def test_potential_reciprocity(obs_axis, center, src_axis):
    geometry = pair(obs_axis, center, src_axis)
    assert potential_integral(geometry) == pytest.approx(potential_integral(geometry.swapped()), rel=1e-9)


@pytest.mark.parametrize("obs_axis, center, src_axis", [
    (2, [0.3, -0.2, 1.5], 2),
    (0, [1.2, 0.3, 0.4], 2),
    (1, [0.0, 2.5, 1.0], 0),
])
def test_scale_covariance(obs_axis, center, src_axis):
    geometry = pair(obs_axis, center, src_axis)
    scaled = geometry.scaled(2.5)
    assert potential_integral(scaled) == pytest.approx(2.5 ** 3 * potential_integral(geometry), rel=1e-10)
    assert efield_integral(scaled) == pytest.approx(2.5 ** 2 * efield_integral(geometry), rel=1e-10)


@pytest.mark.parametrize("obs_axis, center, src_axis", [
    (2, [0.3, 0.2, 1.5], 2),
    (2, [1.0, 0.0, 0.5], 2),
    (0, [1.2, 0.3, 0.4], 2),
    (1, [0.2, 1.1, 0.9], 2),
])
def test_field_is_normal_derivative_of_potential(obs_axis, center, src_axis):
    h = 1e-4
    shift = np.zeros(3)
    shift[obs_axis] = h
    center = np.asarray(center, dtype=float)
    plus = potential_integral(pair(obs_axis, center + shift, src_axis), near_threshold=CLOSED)
    minus = potential_integral(pair(obs_axis, center - shift, src_axis), near_threshold=CLOSED)
    field = efield_integral(pair(obs_axis, center, src_axis), near_threshold=CLOSED)
    assert field == pytest.approx((plus - minus) / (2 * h), rel=1e-5)


def test_field_antisymmetric_across_source_plane():
    above = efield_integral(pair(2, [0, 0, 1.0], 2))
    below = efield_integral(pair(2, [0, 0, -1.0], 2))
    assert above < 0
    assert above == pytest.approx(-below, rel=1e-12)


def test_coincident_field_is_zero():
    assert efield_integral(pair(1, [0, 0, 0], 1)) == 0.0


@pytest.mark.parametrize("obs_axis, center, src_axis", [
    (2, [0.0, 0.0, 6.0], 2),
    (0, [6.0, 1.0, 0.5], 2),
    (1, [3.0, 5.5, 2.0], 1),
])
def test_gauss_far_field_matches_closed_form(obs_axis, center, src_axis):
    geometry = pair(obs_axis, center, src_axis)
    assert potential_integral(geometry, near_threshold=0.0) == pytest.approx(
        potential_integral(geometry, near_threshold=CLOSED), rel=1e-6)
    assert efield_integral(geometry, near_threshold=0.0) == pytest.approx(
        efield_integral(geometry, near_threshold=CLOSED), rel=1e-5)


def test_touching_pairs_are_finite():
    for geometry in (pair(0, [1, 0, 0], 0), pair(0, [0.5, 0, 0.5], 2), pair(1, [0, 0.5, 0.5], 2)):
        assert np.isfinite(potential_integral(geometry))
        assert np.isfinite(efield_integral(geometry))


@pytest.mark.parametrize("index", range(len(touching_pairs())))
def test_touching_pairs_match_split_quadrature(index):
    geometry = touching_pairs()[index]
    ref_a = reference_potential(geometry)
    assert potential_integral(geometry) == pytest.approx(ref_a, rel=1e-8)
    ref_b = reference_field(geometry)
    scale = max(abs(ref_b), 1e-3 * abs(ref_a))
    assert abs(efield_integral(geometry) - ref_b) <= 1e-6 * scale


def test_coplanar_neighbours_have_no_normal_field():
    for geometry in touching_pairs()[:3]:
        assert reference_field(geometry) == 0.0
        assert efield_integral(geometry) == pytest.approx(0.0, abs=1e-9 * potential_integral(geometry))


def test_closed_field_helpers_check_configuration():
    assert np.isfinite(efield_integral_parallel(pair(2, [0, 0, 1], 2)))
    assert np.isfinite(efield_integral_orthogonal(pair(0, [1, 0, 0.5], 2)))
    with pytest.raises(KernelContractError):
        efield_integral_parallel(pair(0, [1, 0, 0], 2))
    with pytest.raises(KernelContractError):
        efield_integral_orthogonal(pair(2, [0, 0, 1], 2))


def test_batched_matches_single():
    offsets = np.array([[0.0, 0.0, 1.0], [2.0, 1.0, 0.0], [0.0, 8.0, 3.0]])
    batch = interaction_values("A", 2, 2, offsets, 1.0)
    for offset, value in zip(offsets, batch):
        assert value == pytest.approx(potential_integral(pair(2, offset, 2)), rel=1e-12)


def test_interaction_values_rejects_unknown_kind():
    with pytest.raises(KernelContractError):
        interaction_values("C", 0, 0, np.zeros((1, 3)), 1.0)


def test_degenerate_panel_rejected():
    with pytest.raises(KernelContractError):
        PanelPairGeometry(2, 2, [0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1])
    with pytest.raises(KernelContractError):
        PanelPairGeometry(2, 2, [0, 0, 0], [1, 1, 0.5], [0, 0, 1], [1, 1, 1])


def test_diagonal_entry_value():
    value = diagonal_entry(DielectricJump(eps_d=4.0, eps_b=1.0, area=0.25))
    assert value == pytest.approx(0.25 * 5.0 / (2.0 * EPS0 * 3.0))
    batch = diagonal_entry(area=1.0, eps_d=np.array([2.0, 1.0]), eps_b=np.array([1.0, 2.0]))
    assert batch[0] == pytest.approx(-batch[1])


@pytest.mark.parametrize("eps_d, eps_b", [(2.0, 2.0), (-1.0, 1.0)])
def test_diagonal_entry_rejects_invalid_jump(eps_d, eps_b):
    with pytest.raises(KernelContractError):
        diagonal_entry(area=1.0, eps_d=eps_d, eps_b=eps_b)
