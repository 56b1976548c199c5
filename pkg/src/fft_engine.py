"""FFT 加速矩阵向量乘模块"""

import logging
import time
from typing import Dict, List, Sequence

import numpy as np
import scipy.fft
from scipy.sparse.linalg import LinearOperator

from .errors import KernelContractError
from .geometry import PanelSet
from .kernel import diagonal_entry
from .toeplitz import CirculantKernelSet, KernelEntry, materialize

logger = logging.getLogger(__name__)


def dielectric_diagonal(panels: PanelSet) -> np.ndarray:
    """系统对角项 Ī：介质行取 diagonal_entry，导体行为 0"""
    diag = np.zeros(len(panels))
    dielectric = ~panels.is_conductor
    if dielectric.any():
        diag[dielectric] = diagonal_entry(
            area=panels.area, eps_d=panels.eps_d[dielectric], eps_b=panels.eps_b[dielectric]
        )
    return diag


def check_slots(panels: PanelSet) -> None:
    """同一方向的面板不得共享槽位"""
    for beta in range(3):
        slots = panels.slot[panels.axis == beta]
        if len(np.unique(slots, axis=0)) != len(slots):
            raise KernelContractError(f"方向 {beta} 的面板槽位冲突")


def scatter(rho: np.ndarray, panels: PanelSet, shape: Sequence[int]) -> List[np.ndarray]:
    """把面板电荷放到三个方向的槽位张量 Q^x, Q^y, Q^z

    Args:
        rho: 长度 N 的电荷向量
        panels: 面板集合
        shape: 张量尺寸（统一循环尺寸）

    Returns:
        三个张量，非槽位处为 0
    """
    rho = np.asarray(rho)
    if rho.shape != (len(panels),):
        raise KernelContractError(f"电荷向量长度 {rho.shape} 与面板数 {len(panels)} 不一致")
    tensors = []
    for beta in range(3):
        index = np.flatnonzero(panels.axis == beta)
        slots = panels.slot[index]
        q = np.zeros(tuple(shape), dtype=rho.dtype)
        q[slots[:, 0], slots[:, 1], slots[:, 2]] = rho[index]
        tensors.append(q)
    return tensors


def gather(tensors: Sequence[np.ndarray], panels: PanelSet) -> np.ndarray:
    """从三个方向的张量取回各面板槽位上的值（scatter 的逆）"""
    out = np.zeros(len(panels), dtype=np.result_type(*tensors))
    for alpha in range(3):
        index = np.flatnonzero(panels.axis == alpha)
        slots = panels.slot[index]
        out[index] = tensors[alpha][slots[:, 0], slots[:, 1], slots[:, 2]]
    return out


def conjugate_derive(kernel: np.ndarray, spectrum: np.ndarray, out: np.ndarray) -> np.ndarray:
    """out += conj(kernel) ∘ spectrum，转置对的作用由存储张量即时共轭得到"""
    out += np.conj(kernel) * spectrum
    return out


def time_convolution(shape: Sequence[int], workers: int = None, repeats: int = 3) -> float:
    """测量一次 FFT 卷积（正变换 + Hadamard + 逆变换）的耗时"""
    rng = np.random.default_rng(0)
    kernel = scipy.fft.fftn(rng.standard_normal(tuple(shape)), workers=workers)
    charges = rng.standard_normal(tuple(shape))
    best = float("inf")
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        scipy.fft.ifftn(kernel * scipy.fft.fftn(charges, workers=workers), workers=workers)
        best = min(best, time.perf_counter() - start)
    return best


class FFTOperator:
    """系统矩阵 [P; E + Ī] 的 FFT 作用

    一个实例同时只执行一次 mvm；压缩核在使用时逐个解压，任何时刻至多保留一个解压后的张量。
    """

    def __init__(self, kernels: CirculantKernelSet, panels: PanelSet,
                 diag: np.ndarray = None, workers: int = None):
        if not kernels.fourier:
            raise KernelContractError("FFTOperator 需要 FFT 后的循环张量")
        if tuple(kernels.dims) != tuple(panels.dims):
            raise KernelContractError(
                f"核张量尺寸 {kernels.dims} 与计算域 {panels.dims} 不一致"
            )
        check_slots(panels)
        self.kernels = kernels
        self.panels = panels
        self.diag = dielectric_diagonal(panels) if diag is None else np.asarray(diag, dtype=float)
        if self.diag.shape != (len(panels),):
            raise KernelContractError("对角项长度与面板数不一致")
        self.workers = workers
        self.shape = tuple(kernels.shape)

        self._index = [np.flatnonzero(panels.axis == a) for a in range(3)]
        self._slots = [panels.slot[i] for i in self._index]
        self._conductor_rows = [i < panels.n_conductor for i in self._index]
        self._signs = [panels.sign[i].astype(float) for i in self._index]
        self.reset_counters()

    def reset_counters(self) -> None:
        self.forward_ffts = 0
        self.inverse_ffts = 0
        self.mvm_count = 0
        self.restore_seconds = 0.0
        self.restore_count = 0
        self.convolution_seconds = 0.0
        self.max_materialized = 0
        self._materialized = 0

    @property
    def n(self) -> int:
        return len(self.panels)

    def _fetch(self, entry: KernelEntry) -> np.ndarray:
        start = time.perf_counter()
        tensor = materialize(entry)
        if tensor is not entry:
            self.restore_seconds += time.perf_counter() - start
            self.restore_count += 1
        self._materialized += 1
        self.max_materialized = max(self.max_materialized, self._materialized)
        return tensor

    def _release(self) -> None:
        self._materialized -= 1

    def mvm(self, rho: np.ndarray) -> np.ndarray:
        """y = [P ρ; E ρ + Ī ρ]（介质行按法向符号取向）"""
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.n,):
            raise KernelContractError(f"mvm 输入长度 {rho.shape} 与面板数 {self.n} 不一致")

        start = time.perf_counter()
        restore_before = self.restore_seconds
        spectra = [scipy.fft.fftn(q, workers=self.workers) for q in scatter(rho, self.panels, self.shape)]
        self.forward_ffts += 3

        out = np.zeros(self.n)
        for alpha in range(3):
            acc_p = np.zeros(self.shape, dtype=complex)
            acc_e = np.zeros(self.shape, dtype=complex)
            for beta in range(3):
                entry, conjugate = self.kernels.potential_entry(alpha, beta)
                kernel = self._fetch(entry)
                if conjugate:
                    conjugate_derive(kernel, spectra[beta], acc_p)
                else:
                    acc_p += kernel * spectra[beta]
                del kernel
                self._release()

                kernel = self._fetch(self.kernels.efield_entry(alpha, beta))
                acc_e += kernel * spectra[beta]
                del kernel
                self._release()

            potential = scipy.fft.ifftn(acc_p, workers=self.workers).real
            field = scipy.fft.ifftn(acc_e, workers=self.workers).real
            self.inverse_ffts += 2

            index, slots = self._index[alpha], self._slots[alpha]
            conductor = self._conductor_rows[alpha]
            c_val = potential[slots[:, 0], slots[:, 1], slots[:, 2]]
            d_val = field[slots[:, 0], slots[:, 1], slots[:, 2]]
            out[index] = np.where(
                conductor, c_val, self._signs[alpha] * d_val + self.diag[index] * rho[index]
            )

        self.mvm_count += 1
        self.convolution_seconds += time.perf_counter() - start - (self.restore_seconds - restore_before)
        return out

    __call__ = mvm

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.mvm, dtype=float)

    def stats(self) -> Dict[str, float]:
        """计数与计时"""
        return {
            "mvm_count": self.mvm_count,
            "forward_ffts": self.forward_ffts,
            "inverse_ffts": self.inverse_ffts,
            "restore_seconds": self.restore_seconds,
            "restore_count": self.restore_count,
            "convolution_seconds": self.convolution_seconds,
            "max_materialized": self.max_materialized,
            "stored_potential_tensors": self.kernels.stored_potential_count,
        }


def mvm(rho: np.ndarray, kernels: CirculantKernelSet, panels: PanelSet,
        diag: np.ndarray = None) -> np.ndarray:
    """一次性 mvm（内部构造 FFTOperator）"""
    return FFTOperator(kernels, panels, diag).mvm(rho)
