"""块 Toeplitz 张量与块循环张量模块"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import scipy.fft

from .config import AXES, get_axis_index
from .errors import CacheError, KernelContractError, StructureError
from .geometry import HALF_OFFSETS
from .kernel import interaction_values
from .tucker import TuckerTensor, compress, decompress

logger = logging.getLogger(__name__)

# 势张量只存储 6 个无序对，场张量存储全部 9 个有序对
POTENTIAL_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
EFIELD_PAIRS = tuple(product(range(3), range(3)))

KernelEntry = Union[np.ndarray, TuckerTensor]


def _pair(alpha, beta) -> Tuple[int, int]:
    return get_axis_index(alpha), get_axis_index(beta)


def pair_name(which: str, alpha: int, beta: int) -> str:
    return f"{which}{AXES[alpha]}{AXES[beta]}"


def slot_dims(direction: int, dims) -> Tuple[int, int, int]:
    """某方向面板的槽位网格尺寸"""
    return tuple(int(n) + (1 if a == direction else 0) for a, n in enumerate(dims))


def toeplitz_dims(alpha, beta, dims) -> Tuple[int, int, int]:
    """Toeplitz 张量尺寸 (P_x, P_y, P_z)"""
    alpha, beta = _pair(alpha, beta)
    out = [int(n) for n in dims]
    if alpha == beta:
        out[alpha] += 1
    else:
        out[alpha] += 2
        out[beta] += 2
    return tuple(out)


def half_shift(alpha, beta) -> np.ndarray:
    """两族面板中心的半格差 2δ = 2(h_α − h_β)，取值 -1/0/1"""
    alpha, beta = _pair(alpha, beta)
    return np.rint(2.0 * (HALF_OFFSETS[alpha] - HALF_OFFSETS[beta])).astype(np.int64)


def source_offset(alpha, beta, voxel_size: float = 1.0) -> np.ndarray:
    """源面板中心 S（观察面板扫描 O = mΔv）"""
    return -0.5 * half_shift(alpha, beta) * voxel_size


def circulant_native_dims(alpha, beta, dims) -> Tuple[int, int, int]:
    """补零前的循环张量尺寸"""
    alpha, beta = _pair(alpha, beta)
    obs, src = slot_dims(alpha, dims), slot_dims(beta, dims)
    return tuple(2 * max(o, s) for o, s in zip(obs, src))


def circulant_shape(dims) -> Tuple[int, int, int]:
    """统一的循环张量尺寸 2(N+1)"""
    return tuple(2 * (int(n) + 1) for n in dims)


def reflect_offsets(d: np.ndarray, two_delta) -> Tuple[np.ndarray, np.ndarray]:
    """槽位差 d 映射到 Toeplitz 下标

    实际中心偏移为 d + δ；偏移为负时按镜像取 m = −d − 2δ。

    Returns:
        (下标 m, 是否镜像)
    """
    two_o = 2 * d + two_delta
    flipped = two_o < 0
    return np.where(flipped, -d - two_delta, d), flipped


@dataclass
class ToeplitzKernelSet:
    """A^{α,β}（6 个）与 B^{α,β}（9 个）Toeplitz 张量"""
    dims: Tuple[int, int, int]
    voxel_size: float
    potential: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    efield: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    def tensor(self, which: str, alpha, beta) -> np.ndarray:
        alpha, beta = _pair(alpha, beta)
        if which == "A":
            if (alpha, beta) not in POTENTIAL_PAIRS:
                raise KernelContractError(f"A 张量只存储 α ≤ β 的组合: {pair_name('A', alpha, beta)}")
            return self.potential[(alpha, beta)]
        return self.efield[(alpha, beta)]

    @property
    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.potential.values()) + sum(t.nbytes for t in self.efield.values())

    def lookup(self, which: str, alpha, beta, d: np.ndarray) -> np.ndarray:
        """按槽位差 d = m_obs − m_src 查表

        Args:
            which: "A" 或 "B"
            alpha: 观察面板法向
            beta: 源面板法向
            d: (n, 3) 整数槽位差

        Returns:
            (n,) 相互作用值
        """
        alpha, beta = _pair(alpha, beta)
        d = np.atleast_2d(np.asarray(d, dtype=np.int64))
        if which == "A" and alpha > beta:
            # 互易性：A^{β,α}(−d)
            alpha, beta, d = beta, alpha, -d
        tensor = self.tensor(which, alpha, beta)
        m, flipped = reflect_offsets(d, half_shift(alpha, beta)[None, :])
        values = tensor[m[:, 0], m[:, 1], m[:, 2]]
        if which == "B":
            values = np.where(flipped[:, alpha], -values, values)
        return values


@dataclass
class CirculantKernelSet:
    """块循环张量 P^{α,β}（存 6 个）与 E^{α,β}（存 9 个）

    fourier 为 True 时存储 FFT 后的张量；条目可以是 Tucker 压缩形式。
    """
    dims: Tuple[int, int, int]
    shape: Tuple[int, int, int]
    potential: Dict[Tuple[int, int], KernelEntry] = field(default_factory=dict)
    efield: Dict[Tuple[int, int], KernelEntry] = field(default_factory=dict)
    fourier: bool = False
    tol: Optional[float] = None
    stats: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def potential_entry(self, alpha, beta) -> Tuple[KernelEntry, bool]:
        """返回 (存储条目, 是否需要共轭)；P̃^{β,α} = conj(P̃^{α,β})"""
        alpha, beta = _pair(alpha, beta)
        if alpha <= beta:
            return self.potential[(alpha, beta)], False
        return self.potential[(beta, alpha)], True

    def efield_entry(self, alpha, beta) -> KernelEntry:
        return self.efield[_pair(alpha, beta)]

    @property
    def compressed(self) -> bool:
        return any(isinstance(e, TuckerTensor) for e in self.potential.values())

    @property
    def stored_potential_count(self) -> int:
        return len(self.potential)

    @property
    def nbytes(self) -> int:
        return sum(_entry_nbytes(e) for e in self.potential.values()) + \
            sum(_entry_nbytes(e) for e in self.efield.values())

    @property
    def raw_nbytes(self) -> int:
        """未压缩时的字节数"""
        itemsize = 16 if self.fourier else 8
        return (len(self.potential) + len(self.efield)) * int(np.prod(self.shape)) * itemsize

    def entries(self):
        for key, entry in self.potential.items():
            yield ("A",) + key, entry
        for key, entry in self.efield.items():
            yield ("B",) + key, entry


def _entry_nbytes(entry: KernelEntry) -> int:
    return int(entry.nbytes)


def materialize(entry: KernelEntry) -> np.ndarray:
    """取出完整张量（压缩条目即时解压）"""
    if isinstance(entry, TuckerTensor):
        return decompress(entry)
    return entry


def generate_toeplitz(alpha, beta, dims, voxel_size: float, which: str,
                      near_threshold: float = None, order: int = None) -> np.ndarray:
    """生成单个 Toeplitz 张量

    源面板固定在 S，观察面板中心扫过 O = mΔv，m 取遍 (P_x, P_y, P_z) 网格。

    Args:
        alpha: 观察面板法向
        beta: 源面板法向
        dims: 计算域体素数 (Nx, Ny, Nz)
        voxel_size: 体素边长
        which: "A" 或 "B"

    Returns:
        Toeplitz 张量
    """
    alpha, beta = _pair(alpha, beta)
    if which not in ("A", "B"):
        raise KernelContractError(f"未知张量类型: {which}")
    if which == "A" and (alpha, beta) not in POTENTIAL_PAIRS:
        raise KernelContractError(f"A 张量只对 6 个无序对生成: {pair_name('A', alpha, beta)}")
    if not voxel_size > 0:
        raise StructureError(f"体素尺寸必须为正: {voxel_size}")
    if min(int(n) for n in dims) < 1:
        raise StructureError(f"计算域尺寸非法: {tuple(dims)}")

    shape = toeplitz_dims(alpha, beta, dims)
    m = np.indices(shape).reshape(3, -1).T
    offsets = (m + 0.5 * half_shift(alpha, beta)) * voxel_size
    values = interaction_values(which, alpha, beta, offsets, voxel_size, near_threshold, order)
    tensor = values.reshape(shape)
    if which == "B" and alpha == beta:
        # 重合面板由系统对角项处理
        tensor[0, 0, 0] = 0.0
    return tensor


def generate_kernel_set(dims, voxel_size: float = 1.0, near_threshold: float = None,
                        order: int = None, workers: int = 1,
                        progress_callback: Callable = None) -> ToeplitzKernelSet:
    """生成全部 15 个 Toeplitz 张量

    Args:
        dims: 计算域体素数
        voxel_size: 体素边长
        workers: 并行线程数
        progress_callback: 进度回调 (percent, message)

    Returns:
        ToeplitzKernelSet
    """
    dims = tuple(int(n) for n in dims)
    jobs = [("A", a, b) for a, b in POTENTIAL_PAIRS] + [("B", a, b) for a, b in EFIELD_PAIRS]
    kernel_set = ToeplitzKernelSet(dims=dims, voxel_size=float(voxel_size))

    def run(job):
        which, a, b = job
        return job, generate_toeplitz(a, b, dims, voxel_size, which, near_threshold, order)

    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, int(workers or 1))) as pool:
        for done, (job, tensor) in enumerate(pool.map(run, jobs), start=1):
            which, a, b = job
            target = kernel_set.potential if which == "A" else kernel_set.efield
            target[(a, b)] = tensor
            if progress_callback:
                progress_callback(int(100 * done / len(jobs)), f"生成 {pair_name(which, a, b)}")
    logger.info("Toeplitz 张量生成完成: dims=%s, %.2f s", dims, time.perf_counter() - start)
    return kernel_set


def scale_toeplitz(kernel_set: ToeplitzKernelSet, voxel_size: float) -> ToeplitzKernelSet:
    """体素尺寸缩放：A 乘 Δv³，B 乘 Δv²（相对生成尺寸）"""
    if not voxel_size > 0:
        raise StructureError(f"体素尺寸必须为正: {voxel_size}")
    factor = float(voxel_size) / kernel_set.voxel_size
    return ToeplitzKernelSet(
        dims=kernel_set.dims,
        voxel_size=float(voxel_size),
        potential={k: t * factor ** 3 for k, t in kernel_set.potential.items()},
        efield={k: t * factor ** 2 for k, t in kernel_set.efield.items()},
    )


def resize_toeplitz(kernel_set: ToeplitzKernelSet, target_dims) -> ToeplitzKernelSet:
    """截取前导子张量以适配较小的计算域"""
    target_dims = tuple(int(n) for n in target_dims)
    if any(t > c for t, c in zip(target_dims, kernel_set.dims)):
        raise CacheError(
            f"目标尺寸 {target_dims} 超出缓存尺寸 {kernel_set.dims}，请以更大的尺寸重新生成缓存"
        )

    def cut(key, tensor):
        p = toeplitz_dims(key[0], key[1], target_dims)
        return np.ascontiguousarray(tensor[:p[0], :p[1], :p[2]])

    return ToeplitzKernelSet(
        dims=target_dims,
        voxel_size=kernel_set.voxel_size,
        potential={k: cut(k, t) for k, t in kernel_set.potential.items()},
        efield={k: cut(k, t) for k, t in kernel_set.efield.items()},
    )


def _axis_map(length: int, n_obs: int, n_src: int, two_delta: int, negate: bool):
    """循环下标 -> (Toeplitz 下标, 符号)；不使用的位置符号为 0"""
    i = np.arange(length)
    positive = i < n_obs
    negative = i >= length - (n_src - 1)
    d = np.where(positive, i, i - length)
    m, flipped = reflect_offsets(d, two_delta)
    sign = np.where(flipped & negate, -1.0, 1.0) * (positive | negative)
    return np.where(positive | negative, m, 0), sign


def embed_native(tensor: np.ndarray, alpha, beta, dims, which: str) -> np.ndarray:
    """Toeplitz 张量嵌入为（补零前的）循环张量，镜像块按法向取号"""
    alpha, beta = _pair(alpha, beta)
    native = circulant_native_dims(alpha, beta, dims)
    obs, src = slot_dims(alpha, dims), slot_dims(beta, dims)
    two_delta = half_shift(alpha, beta)
    maps = [
        _axis_map(native[ax], obs[ax], src[ax], int(two_delta[ax]), which == "B" and ax == alpha)
        for ax in range(3)
    ]
    (m0, s0), (m1, s1), (m2, s2) = maps
    circulant = tensor[np.ix_(m0, m1, m2)]
    return circulant * s0[:, None, None] * s1[None, :, None] * s2[None, None, :]


def pad_uniform(circulant: np.ndarray, dims) -> np.ndarray:
    """在第 N, N+1 位置插入零平面，得到统一尺寸 2(N+1)"""
    for ax, n in enumerate(dims):
        if circulant.shape[ax] < 2 * (n + 1):
            circulant = np.insert(circulant, [n, n], 0.0, axis=ax)
    return circulant


def embed_circulant(kernel_set: ToeplitzKernelSet) -> CirculantKernelSet:
    """全部 Toeplitz 张量嵌入并补零为统一尺寸的循环张量（未做 FFT）"""
    dims = kernel_set.dims
    out = CirculantKernelSet(dims=dims, shape=circulant_shape(dims))
    for (a, b), tensor in kernel_set.potential.items():
        out.potential[(a, b)] = pad_uniform(embed_native(tensor, a, b, dims, "A"), dims)
    for (a, b), tensor in kernel_set.efield.items():
        out.efield[(a, b)] = pad_uniform(embed_native(tensor, a, b, dims, "B"), dims)
    return out


def fft_circulants(circulants: CirculantKernelSet, workers: int = None) -> CirculantKernelSet:
    """对每个循环张量做三维 DFT（正变换不归一化）"""
    if circulants.fourier:
        return circulants
    out = CirculantKernelSet(dims=circulants.dims, shape=circulants.shape, fourier=True)
    for (a, b), tensor in circulants.potential.items():
        out.potential[(a, b)] = scipy.fft.fftn(materialize(tensor), workers=workers)
    for (a, b), tensor in circulants.efield.items():
        out.efield[(a, b)] = scipy.fft.fftn(materialize(tensor), workers=workers)
    return out


def compress_circulants(circulants: CirculantKernelSet, tol: float,
                        workers: int = 1) -> CirculantKernelSet:
    """Tucker 压缩全部循环张量，记录每个张量的压缩统计"""
    out = CirculantKernelSet(dims=circulants.dims, shape=circulants.shape,
                             fourier=circulants.fourier, tol=float(tol))
    jobs = list(circulants.entries())

    def run(job):
        (which, a, b), entry = job
        start = time.perf_counter()
        tucker = compress(materialize(entry), tol)
        return (which, a, b), tucker, time.perf_counter() - start

    with ThreadPoolExecutor(max_workers=max(1, int(workers or 1))) as pool:
        for (which, a, b), tucker, seconds in pool.map(run, jobs):
            target = out.potential if which == "A" else out.efield
            target[(a, b)] = tucker
            out.stats[pair_name(which, a, b)] = {
                "ranks": list(tucker.ranks),
                "compression_ratio": tucker.compression_ratio,
                "compress_seconds": seconds,
            }
    logger.info(
        "循环张量压缩完成: %.2f MB -> %.2f MB",
        circulants.raw_nbytes / 1e6, out.nbytes / 1e6,
    )
    return out


def circulant_action(kernel: np.ndarray, charges: np.ndarray, conjugate: bool = False,
                     workers: int = None) -> np.ndarray:
    """单个 FFT 后循环张量对电荷张量的作用（测试与校验用）"""
    spectrum = scipy.fft.fftn(charges, s=kernel.shape, workers=workers)
    product_ = (np.conj(kernel) if conjugate else kernel) * spectrum
    return scipy.fft.ifftn(product_, workers=workers)
