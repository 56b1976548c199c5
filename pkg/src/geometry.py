"""体素网格与边界面板模块"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .config import AXES, get_axis_index
from .errors import StructureError

logger = logging.getLogger(__name__)

BACKGROUND = 0

# 各方向面板中心相对槽位角点的偏移（单位 Δv）
HALF_OFFSETS = np.array([
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
])

PRIMITIVE_SHAPES = ("box", "sphere", "shell")


@dataclass
class ConductorRegion:
    """导体：编号 + 体素索引"""
    id: int
    voxels: np.ndarray


@dataclass
class DielectricRegion:
    """介质区域：相对介电常数 + 体素索引"""
    eps_r: float
    voxels: np.ndarray


@dataclass
class StructureDescription:
    """结构描述

    体素 (i, j, k) 占据 origin + [i, i+1]×[j, j+1]×[k, k+1]·voxel_size。
    后列出的介质区域覆盖先列出的区域，导体覆盖介质。
    """
    voxel_size: float
    conductors: List[ConductorRegion] = field(default_factory=list)
    dielectrics: List[DielectricRegion] = field(default_factory=list)
    background_eps_r: float = 1.0
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = ""

    def all_voxels(self) -> np.ndarray:
        """所有区域的体素索引"""
        blocks = [np.asarray(c.voxels, dtype=np.int64).reshape(-1, 3) for c in self.conductors]
        blocks += [np.asarray(d.voxels, dtype=np.int64).reshape(-1, 3) for d in self.dielectrics]
        if not blocks:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate(blocks, axis=0)

    def merge(self, other: "StructureDescription") -> "StructureDescription":
        """合并两个结构描述（同一体素格点）

        Args:
            other: 另一个结构描述，其介质区域列在本结构之后

        Returns:
            合并后的结构描述
        """
        if not np.isclose(self.voxel_size, other.voxel_size, rtol=1e-12, atol=0.0):
            raise StructureError(
                f"体素尺寸不一致: {self.voxel_size} vs {other.voxel_size}"
            )
        if not np.allclose(self.origin, other.origin):
            raise StructureError("合并的结构描述格点原点不一致")
        return replace(
            self,
            conductors=list(self.conductors) + list(other.conductors),
            dielectrics=list(self.dielectrics) + list(other.dielectrics),
        )

    def normalized(self) -> "StructureDescription":
        """平移体素索引使最小索引为 0，原点随之调整（物理坐标不变）"""
        voxels = self.all_voxels()
        if len(voxels) == 0:
            return self
        shift = voxels.min(axis=0)
        origin = tuple(float(o + s * self.voxel_size) for o, s in zip(self.origin, shift))
        conductors = [
            ConductorRegion(c.id, np.asarray(c.voxels, dtype=np.int64).reshape(-1, 3) - shift)
            for c in self.conductors
        ]
        dielectrics = [
            DielectricRegion(d.eps_r, np.asarray(d.voxels, dtype=np.int64).reshape(-1, 3) - shift)
            for d in self.dielectrics
        ]
        return replace(self, conductors=conductors, dielectrics=dielectrics, origin=origin)


@dataclass
class VoxelGrid:
    """体素网格

    occupancy 编码: 0 为背景，k>0 为第 k 个导体，-j 为第 j 个介质区域。
    """
    dims: Tuple[int, int, int]
    voxel_edge: float
    occupancy: np.ndarray
    origin: np.ndarray
    conductor_ids: Tuple[int, ...] = ()
    dielectric_eps: Tuple[float, ...] = ()
    background_eps_r: float = 1.0

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise StructureError(f"网格尺寸非法: {self.dims}")
        if not self.voxel_edge > 0:
            raise StructureError(f"体素尺寸必须为正: {self.voxel_edge}")
        if self.occupancy.shape != self.dims:
            raise StructureError(
                f"占据表形状 {self.occupancy.shape} 与网格尺寸 {self.dims} 不一致"
            )
        self.origin = np.asarray(self.origin, dtype=float)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_conductors(self) -> int:
        return len(self.conductor_ids)

    def voxel_eps(self) -> np.ndarray:
        """每个体素的相对介电常数，导体体素为 nan"""
        table = np.array([np.nan, *self.dielectric_eps], dtype=float)
        eps = np.full(self.dims, float(self.background_eps_r))
        dielectric = self.occupancy < 0
        eps[dielectric] = table[-self.occupancy[dielectric]]
        eps[self.occupancy > 0] = np.nan
        return eps


@dataclass(frozen=True)
class Panel:
    """单个边界面板"""
    center: Tuple[float, float, float]
    direction: str
    sign: int
    grid_index: Tuple[int, int, int]
    kind: str
    conductor_id: Optional[int]
    eps_d: Optional[float]
    eps_b: Optional[float]
    area: float


@dataclass
class PanelSet:
    """边界面板集合（结构化数组存储）

    前 n_conductor 个为导体面板，其后为介质面板；每组内按方向 x, y, z 排序，
    同方向内按 (z, y, x) 字典序。
    """
    dims: Tuple[int, int, int]
    voxel_edge: float
    origin: np.ndarray
    axis: np.ndarray
    slot: np.ndarray
    sign: np.ndarray
    conductor: np.ndarray
    eps_d: np.ndarray
    eps_b: np.ndarray
    n_conductor: int
    conductor_ids: Tuple[int, ...] = ()

    def __len__(self) -> int:
        return int(self.axis.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def n_dielectric(self) -> int:
        return len(self) - self.n_conductor

    @property
    def is_conductor(self) -> np.ndarray:
        return np.arange(len(self)) < self.n_conductor

    @property
    def area(self) -> float:
        return self.voxel_edge ** 2

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (self.slot + HALF_OFFSETS[self.axis]) * self.voxel_edge

    @property
    def embed_eps(self) -> np.ndarray:
        """导体面板外侧介质的相对介电常数（用于自由电荷换算）"""
        return np.where(self.is_conductor, self.eps_b, np.nan)

    def direction_indices(self, axis) -> np.ndarray:
        """某方向全部面板在整体向量中的位置（保持整体顺序）"""
        return np.flatnonzero(self.axis == get_axis_index(axis))

    def slot_dims(self, axis) -> Tuple[int, int, int]:
        """某方向面板所在槽位网格的尺寸"""
        index = get_axis_index(axis)
        return tuple(n + (1 if a == index else 0) for a, n in enumerate(self.dims))

    def conductor_mask(self, k: int) -> np.ndarray:
        """第 k 个导体（内部序号，从 1 开始）的面板掩码"""
        return self.conductor == k

    def panel(self, i: int) -> Panel:
        """取出第 i 个面板"""
        is_conductor = i < self.n_conductor
        k = int(self.conductor[i])
        return Panel(
            center=tuple(float(c) for c in self.centers[i]),
            direction=AXES[int(self.axis[i])],
            sign=int(self.sign[i]),
            grid_index=tuple(int(s) for s in self.slot[i]),
            kind="conductor" if is_conductor else "dielectric",
            conductor_id=self.conductor_ids[k - 1] if is_conductor and self.conductor_ids else None,
            eps_d=None if is_conductor else float(self.eps_d[i]),
            eps_b=float(self.eps_b[i]),
            area=self.area,
        )

    def __iter__(self) -> Iterator[Panel]:
        for i in range(len(self)):
            yield self.panel(i)

    def summary(self) -> Dict[str, Any]:
        """面板统计"""
        return {
            "n": len(self),
            "n_conductor": self.n_conductor,
            "n_dielectric": self.n_dielectric,
            "per_direction": {AXES[a]: int(np.sum(self.axis == a)) for a in range(3)},
        }


def build_grid(description: StructureDescription) -> VoxelGrid:
    """由结构描述构建体素网格

    Args:
        description: 结构描述，体素索引必须非负

    Returns:
        紧包围盒上的体素网格
    """
    if not description.voxel_size > 0:
        raise StructureError(f"体素尺寸必须为正: {description.voxel_size}")
    if not description.background_eps_r > 0:
        raise StructureError(f"背景介电常数必须为正: {description.background_eps_r}")

    voxels = description.all_voxels()
    if len(voxels) == 0:
        raise StructureError("结构为空：没有任何导体或介质体素")
    if (voxels < 0).any():
        raise StructureError("体素索引必须非负（请先调用 normalized() 平移）")

    ids = [int(c.id) for c in description.conductors]
    if len(set(ids)) != len(ids):
        raise StructureError(f"导体编号重复: {ids}")
    for region in description.dielectrics:
        if not region.eps_r > 0:
            raise StructureError(f"介质介电常数必须为正: {region.eps_r}")

    lo = voxels.min(axis=0)
    dims = tuple(int(n) for n in voxels.max(axis=0) - lo + 1)
    occupancy = np.zeros(dims, dtype=np.int32)

    # 介质按列出顺序写入，后者覆盖前者
    for j, region in enumerate(description.dielectrics, start=1):
        idx = np.asarray(region.voxels, dtype=np.int64).reshape(-1, 3) - lo
        occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = -j

    for k, conductor in enumerate(description.conductors, start=1):
        idx = np.unique(np.asarray(conductor.voxels, dtype=np.int64).reshape(-1, 3), axis=0) - lo
        if len(idx) == 0:
            raise StructureError(f"导体 {conductor.id} 没有体素")
        claimed = occupancy[idx[:, 0], idx[:, 1], idx[:, 2]]
        if (claimed > 0).any():
            other = ids[int(claimed[claimed > 0][0]) - 1]
            raise StructureError(f"体素同时被导体 {other} 与导体 {conductor.id} 占据")
        occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = k

    origin = np.asarray(description.origin, dtype=float) + lo * description.voxel_size
    grid = VoxelGrid(
        dims=dims,
        voxel_edge=float(description.voxel_size),
        occupancy=occupancy,
        origin=origin,
        conductor_ids=tuple(ids),
        dielectric_eps=tuple(float(d.eps_r) for d in description.dielectrics),
        background_eps_r=float(description.background_eps_r),
    )
    logger.info("体素网格 %s，共 %d 个体素，%d 个导体", dims, grid.n_voxels, len(ids))
    return grid


def enumerate_panels(grid: VoxelGrid) -> PanelSet:
    """枚举导体表面与介质界面上的全部面板

    Args:
        grid: 体素网格

    Returns:
        面板集合，顺序确定
    """
    eps_vox = grid.voxel_eps()
    conductor_parts = []
    dielectric_parts = []

    for axis in range(3):
        pad_width = [(0, 0)] * 3
        pad_width[axis] = (1, 1)
        labels = np.pad(grid.occupancy, pad_width, constant_values=BACKGROUND)
        eps = np.pad(eps_vox, pad_width, constant_values=grid.background_eps_r)

        minus = [slice(None)] * 3
        plus = [slice(None)] * 3
        minus[axis] = slice(0, -1)
        plus[axis] = slice(1, None)
        lm, lp = labels[tuple(minus)], labels[tuple(plus)]
        em, ep = eps[tuple(minus)], eps[tuple(plus)]

        cond_m = lm > 0
        cond_p = lp > 0
        touching = cond_m & cond_p & (lm != lp)
        if touching.any():
            where = np.argwhere(touching)[0]
            a, b = int(lm[tuple(where)]), int(lp[tuple(where)])
            raise StructureError(
                f"导体 {grid.conductor_ids[a - 1]} 与导体 {grid.conductor_ids[b - 1]} "
                f"在 {AXES[axis]} 方向槽位 {tuple(int(w) for w in where)} 处直接接触"
            )

        # 导体面：法向由导体指向外侧
        face = cond_m ^ cond_p
        slots = np.argwhere(face)
        if len(slots):
            on_minus = cond_m[face]
            conductor_parts.append({
                "axis": np.full(len(slots), axis),
                "slot": slots,
                "sign": np.where(on_minus, 1, -1),
                "conductor": np.where(on_minus, lm[face], lp[face]),
                "eps_d": np.full(len(slots), np.nan),
                "eps_b": np.where(on_minus, ep[face], em[face]),
            })

        # 介质界面：区域序号大者为内侧，背景序号为 0
        face = ~cond_m & ~cond_p & (lm != lp) & (em != ep)
        slots = np.argwhere(face)
        if len(slots):
            inner_minus = (-lm[face]) > (-lp[face])
            dielectric_parts.append({
                "axis": np.full(len(slots), axis),
                "slot": slots,
                "sign": np.where(inner_minus, 1, -1),
                "conductor": np.zeros(len(slots), dtype=np.int64),
                "eps_d": np.where(inner_minus, em[face], ep[face]),
                "eps_b": np.where(inner_minus, ep[face], em[face]),
            })

    conductors = _ordered(conductor_parts)
    dielectrics = _ordered(dielectric_parts)
    n_conductor = len(conductors["axis"])

    panels = PanelSet(
        dims=grid.dims,
        voxel_edge=grid.voxel_edge,
        origin=grid.origin,
        axis=np.concatenate((conductors["axis"], dielectrics["axis"])).astype(np.int8),
        slot=np.concatenate((conductors["slot"], dielectrics["slot"])).astype(np.int64),
        sign=np.concatenate((conductors["sign"], dielectrics["sign"])).astype(np.int8),
        conductor=np.concatenate((conductors["conductor"], dielectrics["conductor"])).astype(np.int32),
        eps_d=np.concatenate((conductors["eps_d"], dielectrics["eps_d"])).astype(float),
        eps_b=np.concatenate((conductors["eps_b"], dielectrics["eps_b"])).astype(float),
        n_conductor=n_conductor,
        conductor_ids=grid.conductor_ids,
    )
    logger.info(
        "面板枚举完成: N=%d (导体 %d, 介质 %d)",
        len(panels), panels.n_conductor, panels.n_dielectric,
    )
    return panels


def _ordered(parts: List[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """拼接并按 方向 -> z -> y -> x 排序"""
    keys = ("axis", "slot", "sign", "conductor", "eps_d", "eps_b")
    if not parts:
        empty = {key: np.zeros(0) for key in keys}
        empty["slot"] = np.zeros((0, 3), dtype=np.int64)
        return empty
    merged = {key: np.concatenate([p[key] for p in parts]) for key in keys}
    slot = merged["slot"]
    order = np.lexsort((slot[:, 0], slot[:, 1], slot[:, 2], merged["axis"]))
    return {key: value[order] for key, value in merged.items()}


def primitive_voxels(shape: str, params: Dict[str, Any], voxel_size: float) -> np.ndarray:
    """返回中心落在几何体内部的体素索引（格点角点位于 voxel_size 整数倍处）

    Args:
        shape: box / sphere / shell
        params: box 需要 lo, hi；sphere 需要 center, radius；
            shell 需要 center, inner_radius, outer_radius
        voxel_size: 体素边长

    Returns:
        (n, 3) 体素索引，可能为负
    """
    if not voxel_size > 0:
        raise StructureError(f"体素尺寸必须为正: {voxel_size}")
    if shape not in PRIMITIVE_SHAPES:
        raise StructureError(f"不支持的几何体: {shape}")

    try:
        if shape == "box":
            lo = np.asarray(params["lo"], dtype=float)
            hi = np.asarray(params["hi"], dtype=float)
            if lo.shape != (3,) or hi.shape != (3,) or (hi <= lo).any():
                raise StructureError(f"长方体退化: lo={lo.tolist()}, hi={hi.tolist()}")
            reach_lo, reach_hi = lo, hi
        else:
            center = np.asarray(params["center"], dtype=float)
            if shape == "sphere":
                outer = float(params["radius"])
                inner = 0.0
            else:
                inner = float(params["inner_radius"])
                outer = float(params["outer_radius"])
            if not outer > 0 or inner < 0 or inner >= outer:
                raise StructureError(f"{shape} 半径退化: inner={inner}, outer={outer}")
            reach_lo, reach_hi = center - outer, center + outer
    except KeyError as exc:
        raise StructureError(f"{shape} 缺少参数: {exc.args[0]}") from None

    start = np.floor(reach_lo / voxel_size).astype(np.int64) - 1
    stop = np.ceil(reach_hi / voxel_size).astype(np.int64) + 1
    grids = np.meshgrid(*[np.arange(a, b) for a, b in zip(start, stop)], indexing="ij")
    index = np.stack([g.ravel() for g in grids], axis=1)
    centers = (index + 0.5) * voxel_size

    if shape == "box":
        inside = np.all((centers >= lo) & (centers < hi), axis=1)
    else:
        distance = np.linalg.norm(centers - center, axis=1)
        inside = (distance >= inner) & (distance < outer) if shape == "shell" else distance < outer
    return index[inside]


def voxelize_primitive(shape: str, params: Dict[str, Any], voxel_size: float,
                       conductor_id: int = None, eps_r: float = None) -> StructureDescription:
    """体素化几何体，得到单区域结构描述

    Args:
        shape: box / sphere / shell
        params: 几何参数（物理坐标）
        voxel_size: 体素边长
        conductor_id: 作为导体时的编号
        eps_r: 作为介质时的相对介电常数（与 conductor_id 二选一）

    Returns:
        结构描述（索引在全局格点上，可能为负）
    """
    voxels = primitive_voxels(shape, params, voxel_size)
    if len(voxels) == 0:
        raise StructureError(f"{shape} 在体素尺寸 {voxel_size} 下不包含任何体素中心")
    description = StructureDescription(voxel_size=float(voxel_size))
    if conductor_id is not None:
        description.conductors.append(ConductorRegion(int(conductor_id), voxels))
    elif eps_r is not None:
        description.dielectrics.append(DielectricRegion(float(eps_r), voxels))
    else:
        # 默认视为 1 号导体
        description.conductors.append(ConductorRegion(1, voxels))
    return description
