"""Tucker 张量压缩模块（截断 HOSVD）"""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import KernelContractError

logger = logging.getLogger(__name__)


@dataclass
class TuckerTensor:
    """核心张量 + 三个正交因子矩阵"""
    core: np.ndarray
    factors: List[np.ndarray]
    original_dims: Tuple[int, int, int]
    tol: float

    @property
    def ranks(self) -> Tuple[int, int, int]:
        return tuple(int(r) for r in self.core.shape)

    @property
    def dtype(self):
        return self.core.dtype

    @property
    def nbytes(self) -> int:
        return int(self.core.nbytes + sum(f.nbytes for f in self.factors))

    @property
    def raw_nbytes(self) -> int:
        return int(np.prod(self.original_dims)) * self.core.dtype.itemsize

    @property
    def compression_ratio(self) -> float:
        """CR = ΠD / (Πr + ΣD·r)"""
        dims, ranks = self.original_dims, self.ranks
        return float(np.prod(dims)) / float(np.prod(ranks) + sum(d * r for d, r in zip(dims, ranks)))


def _unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def _left_singular(unfolded: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """展开矩阵的左奇异向量与奇异值

    宽矩阵先对共轭转置做 QR，再对小三角因子做 SVD。
    """
    rows, cols = unfolded.shape
    if cols > rows:
        r = np.linalg.qr(unfolded.conj().T, mode="r")
        u, s, _ = scipy.linalg.svd(r.conj().T, full_matrices=False, check_finite=False)
    else:
        u, s, _ = scipy.linalg.svd(unfolded, full_matrices=False, check_finite=False)
    return u, s


def _truncation_rank(singular: np.ndarray, threshold: float) -> int:
    """丢弃能量不超过 threshold 的最小秩（至少为 1）"""
    energy = singular.astype(float) ** 2
    tail = np.concatenate((np.cumsum(energy[::-1])[::-1], [0.0]))
    keep = int(np.argmax(tail <= threshold))
    return max(1, keep)


def mode_product(tensor: np.ndarray, matrix: np.ndarray, mode: int) -> np.ndarray:
    """i-mode 乘积 tensor ×_mode matrix"""
    moved = np.tensordot(matrix, tensor, axes=([1], [mode]))
    return np.moveaxis(moved, 0, mode)


def compress(tensor: np.ndarray, tol: float) -> TuckerTensor:
    """截断 HOSVD 压缩

    Args:
        tensor: 三维实数或复数张量
        tol: 相对截断容差，0 < tol < 1

    Returns:
        TuckerTensor，满足 ‖X − X̂‖_F ≤ √3·tol·‖X‖_F
    """
    tensor = np.asarray(tensor)
    if tensor.ndim != 3 or tensor.size == 0:
        raise KernelContractError(f"需要非空三维张量，得到形状 {tensor.shape}")
    if not 0.0 < tol < 1.0:
        raise KernelContractError(f"容差必须位于 (0, 1): {tol}")

    dims = tuple(int(n) for n in tensor.shape)
    norm = np.linalg.norm(tensor)
    if norm == 0.0:
        factors = [np.eye(d, 1, dtype=tensor.dtype) for d in dims]
        return TuckerTensor(np.zeros((1, 1, 1), dtype=tensor.dtype), factors, dims, float(tol))

    threshold = (tol * norm) ** 2 / 3.0
    factors = []
    for mode in range(3):
        u, s = _left_singular(_unfold(tensor, mode))
        rank = _truncation_rank(s, threshold)
        factors.append(np.ascontiguousarray(u[:, :rank]))

    core = tensor
    for mode, factor in enumerate(factors):
        core = mode_product(core, factor.conj().T, mode)
    logger.debug("HOSVD: dims=%s ranks=%s", dims, core.shape)
    return TuckerTensor(core, factors, dims, float(tol))


def decompress(tucker: TuckerTensor) -> np.ndarray:
    """恢复完整张量，按维度从小到大依次做 i-mode 乘积"""
    tensor = tucker.core
    for mode in sorted(range(3), key=lambda i: tucker.original_dims[i]):
        tensor = mode_product(tensor, tucker.factors[mode], mode)
    return tensor


def relative_error(tensor: np.ndarray, tucker: TuckerTensor) -> float:
    """‖X − X̂‖_F / ‖X‖_F"""
    norm = np.linalg.norm(tensor)
    if norm == 0.0:
        return float(np.linalg.norm(decompress(tucker)))
    return float(np.linalg.norm(tensor - decompress(tucker)) / norm)


def metrics(tucker: TuckerTensor, conv_time: float,
            restore_time: Optional[float] = None) -> Tuple[float, float, int]:
    """压缩指标

    Args:
        tucker: 压缩张量
        conv_time: 一次 FFT 卷积耗时（秒）
        restore_time: 解压耗时；为空时现场测量一次

    Returns:
        (CR, CO, 压缩后字节数)
    """
    if restore_time is None:
        start = time.perf_counter()
        decompress(tucker)
        restore_time = time.perf_counter() - start
    overhead = restore_time / conv_time if conv_time > 0 else float("inf")
    return tucker.compression_ratio, float(overhead), tucker.nbytes
