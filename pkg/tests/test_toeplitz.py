from itertools import product

import numpy as np
import pytest

from src.errors import CacheError, KernelContractError
from src.kernel import interaction_values
from src.tucker import TuckerTensor
from src.toeplitz import (
    EFIELD_PAIRS,
    POTENTIAL_PAIRS,
    circulant_action,
    circulant_shape,
    compress_circulants,
    embed_circulant,
    fft_circulants,
    generate_kernel_set,
    generate_toeplitz,
    half_shift,
    materialize,
    reflect_offsets,
    resize_toeplitz,
    scale_toeplitz,
    slot_dims,
    toeplitz_dims,
)

DIMS = (2, 3, 2)


@pytest.fixture(scope="module")
def kernel_set():
    return generate_kernel_set(DIMS, 1.0)


@pytest.fixture(scope="module")
def fourier(kernel_set):
    return fft_circulants(embed_circulant(kernel_set))


def test_toeplitz_dims():
    assert toeplitz_dims(0, 0, (2, 3, 4)) == (3, 3, 4)
    assert toeplitz_dims("y", "y", (2, 3, 4)) == (2, 4, 4)
    assert toeplitz_dims(0, 1, (2, 3, 4)) == (4, 5, 4)
    assert toeplitz_dims(2, 0, (2, 3, 4)) == (4, 3, 6)


def test_half_shift():
    np.testing.assert_array_equal(half_shift(0, 0), [0, 0, 0])
    np.testing.assert_array_equal(half_shift(0, 1), [-1, 1, 0])
    np.testing.assert_array_equal(half_shift(2, 0), [1, 0, -1])


def test_reflect_offsets():
    m, flipped = reflect_offsets(np.array([[2, -1, 0]]), np.array([[0, 1, -1]]))
    np.testing.assert_array_equal(m, [[2, 0, 1]])
    np.testing.assert_array_equal(flipped, [[False, True, True]])


def test_kernel_set_layout(kernel_set):
    assert sorted(kernel_set.potential) == sorted(POTENTIAL_PAIRS)
    assert sorted(kernel_set.efield) == sorted(EFIELD_PAIRS)
    for (a, b), tensor in kernel_set.efield.items():
        assert tensor.shape == toeplitz_dims(a, b, DIMS)
    assert kernel_set.efield[(1, 1)][0, 0, 0] == 0.0
    with pytest.raises(KernelContractError):
        kernel_set.tensor("A", 1, 0)


def test_potential_only_for_unordered_pairs():
    with pytest.raises(KernelContractError):
        generate_toeplitz(2, 0, DIMS, 1.0, "A")
    with pytest.raises(KernelContractError):
        generate_toeplitz(0, 0, DIMS, 1.0, "C")


@pytest.mark.parametrize("which", ["A", "B"])
def test_lookup_matches_direct_evaluation(kernel_set, which):
    for alpha, beta in product(range(3), range(3)):
        obs = np.indices(slot_dims(alpha, DIMS)).reshape(3, -1).T
        src = np.indices(slot_dims(beta, DIMS)).reshape(3, -1).T
        d = (obs[:, None, :] - src[None, :, :]).reshape(-1, 3)
        offsets = d + 0.5 * half_shift(alpha, beta)
        direct = interaction_values(which, alpha, beta, offsets, 1.0)
        if which == "B" and alpha == beta:
            direct[np.all(d == 0, axis=1)] = 0.0
        looked_up = kernel_set.lookup(which, alpha, beta, d)
        np.testing.assert_allclose(looked_up, direct, rtol=1e-9, atol=1e-12 * np.abs(direct).max())


def test_potential_reciprocity_in_lookup(kernel_set):
    d = np.array([[1, 0, -1], [0, 2, 1], [-1, -1, 0]])
    np.testing.assert_allclose(kernel_set.lookup("A", 2, 0, d), kernel_set.lookup("A", 0, 2, -d), rtol=1e-12)


def test_scale_matches_direct_generation(kernel_set):
    direct = generate_kernel_set(DIMS, 0.5)
    scaled = scale_toeplitz(kernel_set, 0.5)
    for key, tensor in direct.potential.items():
        np.testing.assert_allclose(scaled.potential[key], tensor, rtol=1e-10)
    for key, tensor in direct.efield.items():
        np.testing.assert_allclose(scaled.efield[key], tensor, rtol=1e-10, atol=1e-10 * np.abs(tensor).max())


def test_resize_takes_leading_subtensor(kernel_set):
    small = resize_toeplitz(kernel_set, (1, 2, 2))
    direct = generate_kernel_set((1, 2, 2), 1.0)
    for key, tensor in direct.potential.items():
        np.testing.assert_allclose(small.potential[key], tensor, rtol=1e-12)
    with pytest.raises(CacheError):
        resize_toeplitz(kernel_set, (3, 3, 2))


def test_circulants_share_uniform_shape(fourier):
    assert fourier.shape == circulant_shape(DIMS) == (6, 8, 6)
    assert fourier.fourier
    assert fourier.stored_potential_count == 6
    for _, entry in fourier.entries():
        assert entry.shape == fourier.shape
    _, conjugate = fourier.potential_entry(2, 1)
    assert conjugate


@pytest.mark.parametrize("which", ["A", "B"])
def test_circulant_convolution_matches_toeplitz_sum(kernel_set, fourier, rng, which):
    for alpha, beta in product(range(3), range(3)):
        src = np.indices(slot_dims(beta, DIMS)).reshape(3, -1).T
        obs = np.indices(slot_dims(alpha, DIMS)).reshape(3, -1).T
        charges = rng.standard_normal(len(src))

        q = np.zeros(fourier.shape)
        q[src[:, 0], src[:, 1], src[:, 2]] = charges
        if which == "A":
            entry, conjugate = fourier.potential_entry(alpha, beta)
        else:
            entry, conjugate = fourier.efield_entry(alpha, beta), False
        field = circulant_action(entry, q, conjugate).real
        fast = field[obs[:, 0], obs[:, 1], obs[:, 2]]

        d = (obs[:, None, :] - src[None, :, :]).reshape(-1, 3)
        matrix = kernel_set.lookup(which, alpha, beta, d).reshape(len(obs), len(src))
        reference = matrix @ charges
        np.testing.assert_allclose(fast, reference, rtol=0, atol=1e-10 * np.abs(reference).max())


def test_compress_circulants_records_stats(fourier):
    compressed = compress_circulants(fourier, 1e-10)
    assert compressed.compressed
    assert compressed.tol == 1e-10
    assert len(compressed.stats) == 15
    assert "Axy" in compressed.stats and "Bzx" in compressed.stats
    for _, entry in compressed.entries():
        assert isinstance(entry, TuckerTensor)
    original = fourier.potential[(0, 1)]
    restored = materialize(compressed.potential[(0, 1)])
    assert np.linalg.norm(restored - original) <= np.sqrt(3.0) * 1e-10 * np.linalg.norm(original) * 1.01
