import numpy as np
import pytest
import scipy.linalg

from src.errors import PreconditionerError, StructureError
from src.fft_engine import dielectric_diagonal
from src.preconditioner import (
    block_matrix,
    build,
    owner_voxels,
    partition_boxes,
    partition_conductor_boxes,
)
from src.preset_manager import coated_sphere, parallel_interconnects
from src.solver import assemble_dense
from src.structure_loader import load_structure
from src.toeplitz import generate_kernel_set

from conftest import make_structure, panels_of


def setup(structure, box_dims, mode, **kwargs):
    panels = panels_of(structure)
    dims = tuple(min(b, n) for b, n in zip(box_dims, panels.dims))
    kernels = generate_kernel_set(dims, panels.voxel_edge)
    diag = dielectric_diagonal(panels)
    return panels, build(panels, None, dims, kernels, diag, mode=mode, **kwargs)


@pytest.fixture
def conductor_row():
    """沿 x 等距排列的四个单体素导体"""
    return make_structure({k + 1: [[2 * k, 0, 0]] for k in range(4)})


def test_partition_covers_every_panel_once(two_coated_conductors):
    panels = panels_of(two_coated_conductors)
    part = partition_boxes(panels, (2, 2, 2))
    assert part.counts == (3, 2, 2)
    members = np.concatenate(list(part.members.values()))
    assert sorted(members.tolist()) == list(range(len(panels)))


def test_box_dims_clipped_to_domain(single_voxel):
    part = partition_boxes(panels_of(single_voxel), (10, 10, 10))
    assert part.box_dims == (1, 1, 1)
    assert part.n_boxes == 1
    assert len(part.members[0]) == 6


def test_invalid_box_dims(single_voxel):
    with pytest.raises(StructureError):
        partition_boxes(panels_of(single_voxel), (0, 1, 1))


def test_owner_voxels_of_single_voxel(single_voxel):
    panels = panels_of(single_voxel)
    np.testing.assert_array_equal(owner_voxels(panels), np.zeros((6, 3), dtype=int))


def test_conductor_partition_is_anchored_at_conductor(coated_voxel):
    panels = panels_of(coated_voxel)
    part = partition_conductor_boxes(panels, (2, 2, 2))
    assert part.anchor == (1, 1, 1)
    assert part.counts == (1, 1, 1)
    assert sorted(part.members[0].tolist()) == list(range(panels.n_conductor))
    assert (part.box_of_panel[panels.n_conductor:] == -1).all()


def test_conductor_voxel_panels_share_a_box(two_coated_conductors):
    # 槽位划分会把导体体素 + 侧的面板分到相邻盒
    panels = panels_of(two_coated_conductors)
    part = partition_conductor_boxes(panels, (1, 1, 1))
    assert part.box_dims == (1, 1, 1)
    assert len(part.members) == 2
    assert all(len(rows) == 6 for rows in part.members.values())
    slot_part = partition_boxes(panels, (1, 1, 1))
    assert len({slot_part.box_of_panel[i] for i in range(panels.n_conductor)}) > 2


def test_identical_boxes_are_inverted_once(conductor_row):
    panels, precond = setup(conductor_row, (2, 1, 1), "hybrid")
    assert precond.box_count == 4
    assert precond.unique_blocks == 1
    assert precond.nbytes_without_dedup == 4 * 6 * 6 * 8
    assert precond.block_nbytes == 6 * 6 * 8


def test_dedup_matches_per_box_inversion(conductor_row):
    panels, precond = setup(conductor_row, (2, 1, 1), "hybrid")
    kernels = generate_kernel_set(precond.partition.box_dims, 1.0)
    blocks = precond.materialize_blocks(panels, kernels, dielectric_diagonal(panels))
    for box, block in blocks.items():
        np.testing.assert_allclose(precond.blocks[precond.box_block[box]], block, rtol=1e-12)


def test_block_matrix_matches_dense(two_coated_conductors):
    panels = panels_of(two_coated_conductors)
    kernels = generate_kernel_set(panels.dims, panels.voxel_edge)
    index = np.arange(len(panels))
    dense = assemble_dense(panels)
    np.testing.assert_allclose(block_matrix(index, panels, kernels, dielectric_diagonal(panels)), dense,
                               rtol=1e-9, atol=1e-12 * np.abs(dense).max())


def test_block_mode_over_whole_domain_is_exact_inverse(coated_voxel, rng):
    panels, precond = setup(coated_voxel, (10, 10, 10), "block")
    dense = assemble_dense(panels)
    x = rng.standard_normal(len(panels))
    np.testing.assert_allclose(precond(dense @ x), x, rtol=1e-8, atol=1e-8 * np.abs(x).max())


def test_hybrid_inverts_conductor_block_only(coated_voxel, rng):
    panels, precond = setup(coated_voxel, (10, 10, 10), "hybrid")
    n_c = panels.n_conductor
    dense = assemble_dense(panels)
    diag = dielectric_diagonal(panels)

    x = rng.standard_normal(n_c)
    r = np.zeros(len(panels))
    r[:n_c] = dense[:n_c, :n_c] @ x
    r[n_c:] = rng.standard_normal(len(panels) - n_c)
    y = precond(r)
    np.testing.assert_allclose(y[:n_c], x, rtol=1e-8, atol=1e-8 * np.abs(x).max())
    np.testing.assert_allclose(y[n_c:], r[n_c:] / diag[n_c:])


def test_diagonal_mode(coated_voxel):
    panels, precond = setup(coated_voxel, (10, 10, 10), "diagonal")
    dense = assemble_dense(panels)
    np.testing.assert_allclose(precond.diag_inv, 1.0 / np.diag(dense), rtol=1e-12)
    assert precond.unique_blocks == 0


def test_none_mode_is_identity(coated_voxel, rng):
    _, precond = setup(coated_voxel, (10, 10, 10), "none")
    r = rng.standard_normal(len(precond.diag_inv))
    np.testing.assert_array_equal(precond(r), r)


def test_summary_fields(coated_voxel):
    _, precond = setup(coated_voxel, (2, 2, 2), "hybrid", workers=2)
    summary = precond.summary()
    assert summary["mode"] == "hybrid"
    assert summary["bytes"] == precond.nbytes > 0
    assert summary["boxes"] >= 1


def test_unknown_mode(single_voxel):
    with pytest.raises(StructureError):
        setup(single_voxel, (1, 1, 1), "jacobi")


def test_singular_block_reports_box(single_voxel, monkeypatch):
    def singular(matrix):
        raise np.linalg.LinAlgError("singular matrix")

    monkeypatch.setattr(scipy.linalg, "inv", singular)
    with pytest.raises(PreconditionerError) as info:
        setup(single_voxel, (1, 1, 1), "hybrid")
    assert info.value.box == (0, 0, 0)


def test_periodic_interconnects_are_deduplicated():
    structure = load_structure(parallel_interconnects(layers=1, columns=3, width=4, length=40,
                                                      pitch=10, margin=1))
    panels, precond = setup(structure, (10, 10, 10), "hybrid")
    assert precond.partition.anchor == (1, 1, 1)
    assert precond.partition.box_dims == (10, 10, 3)
    # 每根导线沿 x 分 4 个盒：左端、两个相同的中段、右端
    assert precond.box_count == 12
    assert precond.unique_blocks == 3
    assert precond.unique_blocks < precond.box_count
    assert precond.block_nbytes < precond.nbytes_without_dedup < precond.nbytes_conventional


def test_conventional_bytes_match_slot_partition(two_coated_conductors):
    panels, precond = setup(two_coated_conductors, (2, 2, 2), "block")
    part = partition_boxes(panels, (2, 2, 2))
    expected = sum(len(rows) ** 2 * 8 for rows in part.members.values())
    assert precond.nbytes_conventional == precond.nbytes_without_dedup == expected
    assert precond.summary()["bytes_conventional"] == expected


def test_hybrid_blocks_smaller_than_conventional_on_sphere():
    structure = load_structure(coated_sphere(voxel_size=0.05))
    panels, precond = setup(structure, (10, 10, 10), "hybrid")
    assert precond.block_nbytes < 0.5 * precond.nbytes_conventional
