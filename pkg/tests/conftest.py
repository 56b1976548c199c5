"""测试公共夹具：小结构、随机数、FFT 算子"""

import numpy as np
import pytest

from src.geometry import (
    ConductorRegion,
    DielectricRegion,
    StructureDescription,
    build_grid,
    enumerate_panels,
)
from src.toeplitz import embed_circulant, fft_circulants, generate_kernel_set


def make_structure(conductors, dielectrics=(), voxel_size=1.0, background_eps_r=1.0):
    """conductors: {id: [体素, ...]}，dielectrics: [(eps_r, [体素, ...]), ...]"""
    return StructureDescription(
        voxel_size=voxel_size,
        conductors=[ConductorRegion(cid, np.array(v)) for cid, v in conductors.items()],
        dielectrics=[DielectricRegion(eps, np.array(v)) for eps, v in dielectrics],
        background_eps_r=background_eps_r,
    )


def block_voxels(shape):
    return np.argwhere(np.ones(shape, dtype=bool))


def panels_of(structure):
    return enumerate_panels(build_grid(structure.normalized()))


def fourier_kernels(panels):
    return fft_circulants(embed_circulant(generate_kernel_set(panels.dims, panels.voxel_edge)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def single_voxel():
    """真空中的单体素导体"""
    return make_structure({1: [[0, 0, 0]]})


@pytest.fixture
def coated_voxel():
    """3×3×3 介质块（ε_r = 2）中心嵌一个导体体素"""
    return make_structure({1: [[1, 1, 1]]}, [(2.0, block_voxels((3, 3, 3)))])


@pytest.fixture
def two_conductors():
    """真空中相隔一个体素的两个导体"""
    return make_structure({1: [[0, 0, 0]], 2: [[2, 0, 0]]})


@pytest.fixture
def two_coated_conductors():
    """同一介质块中的两个导体，介质内部再叠一层高介电常数区域"""
    host = block_voxels((5, 3, 3))
    inner = block_voxels((2, 3, 3)) + [3, 0, 0]
    return make_structure({1: [[1, 1, 1]], 2: [[3, 1, 1]]}, [(2.0, host), (4.0, inner)], voxel_size=0.5)
