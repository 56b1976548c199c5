import numpy as np
import pytest

from src.config import DEFAULT_SOLVER
from src.errors import KernelContractError
from src.fft_engine import FFTOperator, dielectric_diagonal, gather, mvm, scatter
from src.solver import assemble_dense
from src.toeplitz import compress_circulants, embed_circulant, generate_kernel_set

from conftest import block_voxels, fourier_kernels, make_structure, panels_of


@pytest.mark.parametrize("name", ["single_voxel", "two_conductors", "coated_voxel", "two_coated_conductors"])
def test_fft_mvm_matches_dense(request, rng, name):
    panels = panels_of(request.getfixturevalue(name))
    operator = FFTOperator(fourier_kernels(panels), panels)
    dense = assemble_dense(panels)
    for _ in range(3):
        x = rng.standard_normal(len(panels))
        reference = dense @ x
        assert np.linalg.norm(operator(x) - reference) <= 1e-10 * np.linalg.norm(reference)


def test_fft_counts_per_mvm(coated_voxel, rng):
    panels = panels_of(coated_voxel)
    operator = FFTOperator(fourier_kernels(panels), panels)
    for _ in range(4):
        operator.mvm(rng.standard_normal(len(panels)))
    stats = operator.stats()
    assert stats["mvm_count"] == 4
    assert stats["forward_ffts"] == 3 * 4
    assert stats["inverse_ffts"] == 6 * 4
    assert stats["stored_potential_tensors"] == 6


def test_compressed_kernels_restored_one_at_a_time(coated_voxel, rng):
    panels = panels_of(coated_voxel)
    kernels = fourier_kernels(panels)
    exact = FFTOperator(kernels, panels)
    compressed = FFTOperator(compress_circulants(kernels, 1e-12), panels)
    x = rng.standard_normal(len(panels))
    reference = exact(x)
    assert np.linalg.norm(compressed(x) - reference) <= 1e-8 * np.linalg.norm(reference)
    assert compressed.max_materialized == 1
    assert compressed.restore_count == 18


def test_dielectric_diagonal(coated_voxel):
    panels = panels_of(coated_voxel)
    diag = dielectric_diagonal(panels)
    assert (diag[:panels.n_conductor] == 0).all()
    # ε_d = 2 > ε_b = 1
    assert (diag[panels.n_conductor:] > 0).all()


def test_scatter_gather_roundtrip(two_coated_conductors, rng):
    panels = panels_of(two_coated_conductors)
    rho = rng.standard_normal(len(panels))
    shape = tuple(2 * (n + 1) for n in panels.dims)
    tensors = scatter(rho, panels, shape)
    assert len(tensors) == 3
    assert sum(np.count_nonzero(t) for t in tensors) == len(panels)
    np.testing.assert_array_equal(gather(tensors, panels), rho)


def test_mvm_rejects_wrong_length(single_voxel):
    panels = panels_of(single_voxel)
    operator = FFTOperator(fourier_kernels(panels), panels)
    with pytest.raises(KernelContractError):
        operator(np.ones(len(panels) + 1))


def test_operator_requires_fourier_kernels(single_voxel):
    panels = panels_of(single_voxel)
    with pytest.raises(KernelContractError):
        FFTOperator(embed_circulant(generate_kernel_set(panels.dims, 1.0)), panels)


def test_operator_requires_matching_dims(single_voxel, two_conductors):
    panels = panels_of(two_conductors)
    with pytest.raises(KernelContractError):
        FFTOperator(fourier_kernels(panels_of(single_voxel)), panels)


def test_linear_operator_and_functional_form(two_conductors, rng):
    panels = panels_of(two_conductors)
    kernels = fourier_kernels(panels)
    x = rng.standard_normal(len(panels))
    expected = FFTOperator(kernels, panels)(x)
    np.testing.assert_allclose(FFTOperator(kernels, panels).as_linear_operator() @ x, expected)
    np.testing.assert_allclose(mvm(x, kernels, panels), expected)


def test_mvm_is_linear(two_coated_conductors, rng):
    panels = panels_of(two_coated_conductors)
    operator = FFTOperator(fourier_kernels(panels), panels)
    x, y = rng.standard_normal((2, len(panels)))
    combined = operator(2.5 * x - 0.75 * y)
    expected = 2.5 * operator(x) - 0.75 * operator(y)
    assert np.linalg.norm(combined - expected) <= 1e-12 * np.linalg.norm(expected)


def test_conductor_operator_is_symmetric(rng):
    structure = make_structure({1: block_voxels((2, 2, 1)), 2: [[0, 0, 3], [1, 0, 3]]})
    panels = panels_of(structure)
    assert panels.n_dielectric == 0
    operator = FFTOperator(fourier_kernels(panels), panels)
    rho1, rho2 = rng.standard_normal((2, len(panels)))
    left = operator(rho1) @ rho2
    right = rho1 @ operator(rho2)
    scale = np.linalg.norm(operator(rho1)) * np.linalg.norm(rho2)
    assert abs(left - right) <= 1e-12 * scale


def test_compression_at_default_tolerance_is_transparent(two_coated_conductors, rng):
    panels = panels_of(two_coated_conductors)
    kernels = fourier_kernels(panels)
    exact = FFTOperator(kernels, panels)
    compressed = FFTOperator(compress_circulants(kernels, DEFAULT_SOLVER["tucker_tol"]), panels)
    for _ in range(3):
        x = rng.standard_normal(len(panels))
        reference = exact(x)
        assert np.linalg.norm(compressed(x) - reference) < 1e-6 * np.linalg.norm(reference)
