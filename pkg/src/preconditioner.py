"""块对角-对角左预条件子模块

hybrid: 导体面板按所属导体体素分盒求逆，介质行取 Ī 的逆
block:  传统块对角，全部面板按槽位几何分盒求逆
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .config import PRECONDITIONER_MODES
from .errors import KernelContractError, PreconditionerError, StructureError
from .geometry import PanelSet, VoxelGrid
from .toeplitz import ToeplitzKernelSet

logger = logging.getLogger(__name__)


@dataclass
class BoxPartition:
    """把包围盒切分为小盒，每个参与分块的面板归入唯一的盒

    box_of_panel 中未参与分块的面板为 -1；anchor 为盒 (0, 0, 0) 起点的体素坐标。
    """
    box_dims: Tuple[int, int, int]
    counts: Tuple[int, int, int]
    box_of_panel: np.ndarray
    members: Dict[int, np.ndarray] = field(default_factory=dict)
    anchor: Tuple[int, int, int] = (0, 0, 0)

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.counts))

    def box_coords(self, box: int) -> Tuple[int, int, int]:
        return tuple(int(i) for i in np.unravel_index(box, self.counts))

    def box_origin(self, box: int) -> np.ndarray:
        return np.asarray(self.anchor) + np.asarray(self.box_coords(box)) * np.asarray(self.box_dims)

    def block_nbytes(self) -> int:
        """逐盒存储稠密块（不去重）所需字节数"""
        return int(sum(len(rows) ** 2 * 8 for rows in self.members.values()))


def owner_voxels(panels: PanelSet) -> np.ndarray:
    """面板所属体素：导体面板取导体一侧，介质面板取内侧区域一侧"""
    owner = panels.slot.copy()
    plus = np.flatnonzero(panels.sign > 0)
    owner[plus, panels.axis[plus]] -= 1
    return owner


def _check_box_dims(box_dims, dims) -> Tuple[int, int, int]:
    box_dims = tuple(int(b) for b in box_dims)
    if len(box_dims) != 3 or min(box_dims) < 1:
        raise StructureError(f"盒尺寸必须为正整数: {box_dims}")
    return tuple(min(b, n) for b, n in zip(box_dims, dims))


def _group(flat: np.ndarray, rows: np.ndarray) -> Dict[int, np.ndarray]:
    order = np.argsort(flat, kind="stable")
    boxes, starts = np.unique(flat[order], return_index=True)
    return {
        int(b): np.sort(rows[chunk])
        for b, chunk in zip(boxes, np.split(order, starts[1:]))
    }


def partition_boxes(panels: PanelSet, box_dims) -> BoxPartition:
    """按槽位把全部面板划分到盒中

    Args:
        panels: 面板集合
        box_dims: 盒尺寸 (N_vx, N_vy, N_vz)，超过计算域时截断为计算域

    Returns:
        BoxPartition；域边界处的剩余盒可能更小
    """
    dims = panels.dims
    box_dims = _check_box_dims(box_dims, dims)
    counts = tuple(-(-n // b) for n, b in zip(dims, box_dims))

    coords = np.minimum(panels.slot // np.asarray(box_dims), np.asarray(counts) - 1)
    flat = np.ravel_multi_index(coords.T, counts) if len(panels) else np.zeros(0, dtype=np.int64)
    return BoxPartition(box_dims, counts, flat, _group(flat, np.arange(len(panels))))


def partition_conductor_boxes(panels: PanelSet, box_dims) -> BoxPartition:
    """按所属导体体素把导体面板划分到盒中

    盒网格从导体体素包围盒的最小角开始，同一导体体素的边界面板总在同一个盒内。
    """
    box_dims = _check_box_dims(box_dims, panels.dims)
    box_of_panel = np.full(len(panels), -1, dtype=np.int64)
    rows = np.arange(panels.n_conductor)
    if len(rows) == 0:
        return BoxPartition(box_dims, (1, 1, 1), box_of_panel)

    owner = owner_voxels(panels)[rows]
    anchor = owner.min(axis=0)
    extent = owner.max(axis=0) - anchor + 1
    counts = tuple(int(-(-e // b)) for e, b in zip(extent, box_dims))
    flat = np.ravel_multi_index(((owner - anchor) // np.asarray(box_dims)).T, counts)
    box_of_panel[rows] = flat
    return BoxPartition(box_dims, counts, box_of_panel, _group(flat, rows),
                        tuple(int(a) for a in anchor))


def _signature(index: np.ndarray, panels: PanelSet, origin: np.ndarray) -> tuple:
    """盒内面板签名：方向、相对槽位、类型与介电跳变"""
    rel = panels.slot[index] - origin
    items = []
    for i, p in enumerate(index):
        if p < panels.n_conductor:
            items.append((int(panels.axis[p]), *map(int, rel[i]), "c"))
        else:
            items.append((int(panels.axis[p]), *map(int, rel[i]), "d", int(panels.sign[p]),
                          float(panels.eps_d[p]), float(panels.eps_b[p])))
    return tuple(items)


def block_matrix(index: np.ndarray, panels: PanelSet, kernels: ToeplitzKernelSet,
                 diag: np.ndarray) -> np.ndarray:
    """盒内稠密系统矩阵（导体行为势积分，介质行为带符号的场积分加 Ī 对角）"""
    axes = panels.axis[index]
    slots = panels.slot[index]
    conductor = index < panels.n_conductor
    signs = panels.sign[index].astype(float)
    k = len(index)
    matrix = np.zeros((k, k))
    for alpha in range(3):
        rows = np.flatnonzero(axes == alpha)
        if len(rows) == 0:
            continue
        for beta in range(3):
            cols = np.flatnonzero(axes == beta)
            if len(cols) == 0:
                continue
            d = (slots[rows][:, None, :] - slots[cols][None, :, :]).reshape(-1, 3)
            block = kernels.lookup("A", alpha, beta, d).reshape(len(rows), len(cols))
            if not conductor[rows].all():
                field_block = kernels.lookup("B", alpha, beta, d).reshape(len(rows), len(cols))
                block = np.where(conductor[rows][:, None], block, signs[rows][:, None] * field_block)
            matrix[np.ix_(rows, cols)] = block
    matrix[np.diag_indices(k)] += diag[index]
    return matrix


@dataclass
class Preconditioner:
    """左预条件子：去重后的逆块 + 未被覆盖行的对角逆"""
    mode: str
    partition: Optional[BoxPartition]
    blocks: List[np.ndarray]
    groups: List[Tuple[int, np.ndarray]]
    box_block: Dict[int, int]
    diag_inv: np.ndarray
    nbytes_without_dedup: int = 0
    nbytes_conventional: int = 0
    build_seconds: float = 0.0

    @property
    def unique_blocks(self) -> int:
        return len(self.blocks)

    @property
    def box_count(self) -> int:
        return len(self.box_block)

    @property
    def block_nbytes(self) -> int:
        return int(sum(b.nbytes for b in self.blocks))

    @property
    def nbytes(self) -> int:
        return self.block_nbytes + int(self.diag_inv.nbytes)

    def apply(self, r: np.ndarray) -> np.ndarray:
        """y = R r"""
        r = np.asarray(r)
        if r.shape != self.diag_inv.shape:
            raise KernelContractError(f"预条件输入长度 {r.shape} 不匹配")
        y = self.diag_inv * r
        for block_id, index in self.groups:
            # index: (盒数, k)，同一逆块的盒批量相乘
            y[index] = r[index] @ self.blocks[block_id].T
        return y

    __call__ = apply

    def materialize_blocks(self, panels: PanelSet, kernels: ToeplitzKernelSet,
                           diag: np.ndarray) -> Dict[int, np.ndarray]:
        """不去重地逐盒重新求逆（校验去重结果用）"""
        out = {}
        for box in self.box_block:
            index = self.partition.members[box]
            out[box] = scipy.linalg.inv(block_matrix(index, panels, kernels, diag))
        return out

    def summary(self) -> Dict[str, float]:
        return {
            "mode": self.mode,
            "boxes": self.box_count,
            "unique_blocks": self.unique_blocks,
            "bytes": self.nbytes,
            "block_bytes": self.block_nbytes,
            "bytes_without_dedup": self.nbytes_without_dedup,
            "bytes_conventional": self.nbytes_conventional,
            "build_seconds": self.build_seconds,
        }


def build(panels: PanelSet, grid: Optional[VoxelGrid], box_dims, small_kernels: ToeplitzKernelSet,
          diag: np.ndarray, mode: str = "hybrid", workers: int = 1) -> Preconditioner:
    """构建预条件子

    Args:
        panels: 面板集合
        grid: 体素网格（只用于尺寸校验，可为 None）
        box_dims: 盒尺寸（体素数）
        small_kernels: 至少覆盖盒尺寸的 Toeplitz 张量
        diag: 系统对角项 Ī（导体行为 0）
        mode: hybrid / block / diagonal / none
        workers: 并行求逆线程数

    Returns:
        Preconditioner
    """
    if mode not in PRECONDITIONER_MODES:
        raise StructureError(f"未知预条件模式: {mode}")
    if grid is not None and tuple(grid.dims) != tuple(panels.dims):
        raise KernelContractError("网格与面板集合尺寸不一致")
    start = time.perf_counter()
    n = len(panels)
    conductor = panels.is_conductor

    if mode == "none":
        return Preconditioner(mode, None, [], [], {}, np.ones(n),
                              build_seconds=time.perf_counter() - start)

    if mode == "diagonal":
        diag_inv = np.empty(n)
        for alpha in range(3):
            rows = np.flatnonzero(conductor & (panels.axis == alpha))
            if len(rows):
                self_term = small_kernels.lookup("A", alpha, alpha, np.zeros((1, 3), dtype=np.int64))[0]
                diag_inv[rows] = 1.0 / self_term
        diag_inv[~conductor] = 1.0 / diag[~conductor]
        return Preconditioner(mode, None, [], [], {}, diag_inv,
                              build_seconds=time.perf_counter() - start)

    conventional = partition_boxes(panels, box_dims)
    part = partition_conductor_boxes(panels, box_dims) if mode == "hybrid" else conventional
    if any(s < b for s, b in zip(small_kernels.dims, part.box_dims)):
        raise KernelContractError(
            f"小盒核张量尺寸 {small_kernels.dims} 小于盒尺寸 {part.box_dims}"
        )

    # 按签名去重
    unique: Dict[tuple, int] = {}
    representative: List[np.ndarray] = []
    representative_box: List[int] = []
    box_block: Dict[int, int] = {}
    for box, rows in part.members.items():
        key = _signature(rows, panels, part.box_origin(box))
        if key not in unique:
            unique[key] = len(representative)
            representative.append(rows)
            representative_box.append(box)
        box_block[box] = unique[key]

    def invert(job):
        block_id, rows = job
        try:
            return scipy.linalg.inv(block_matrix(rows, panels, small_kernels, diag))
        except (np.linalg.LinAlgError, ValueError) as exc:
            box = part.box_coords(representative_box[block_id])
            raise PreconditionerError(f"盒 {box} 的块矩阵奇异: {exc}", box=box) from exc

    with ThreadPoolExecutor(max_workers=max(1, int(workers or 1))) as pool:
        blocks = list(pool.map(invert, enumerate(representative)))

    groups_index: Dict[int, List[np.ndarray]] = {}
    for box, block_id in box_block.items():
        groups_index.setdefault(block_id, []).append(part.members[box])
    groups = [(block_id, np.stack(rows)) for block_id, rows in sorted(groups_index.items())]

    covered = part.box_of_panel >= 0
    if (~covered & conductor).any():
        raise PreconditionerError("存在未被任何盒覆盖的导体面板")
    diag_inv = np.zeros(n)
    diag_inv[~covered] = 1.0 / diag[~covered]

    precond = Preconditioner(mode, part, blocks, groups, box_block, diag_inv,
                             part.block_nbytes(), conventional.block_nbytes(),
                             time.perf_counter() - start)
    logger.info(
        "预条件子(%s): %d 个盒，%d 个唯一块，%.2f MB（不去重 %.2f MB，传统块对角 %.2f MB）",
        mode, precond.box_count, precond.unique_blocks, precond.block_nbytes / 1e6,
        precond.nbytes_without_dedup / 1e6, precond.nbytes_conventional / 1e6,
    )
    return precond
