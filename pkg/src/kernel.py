"""面板-面板相互作用积分模块

所有积分均为 Galerkin 双重面积分：
    势积分   ∫∫ G(r, r') dS' dS
    法向场积分 ∂/∂n_obs ∫∫ G(r, r') dS' dS
其中 G = 1 / (4πε₀|r − r'|)。近场使用闭式原函数，远场使用张量积 Gauss 积分。
闭式原函数中的偏移量一律取 “源坐标 − 观察坐标”。
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from .config import DEFAULT_SOLVER, EPS0, EPS_REG, KERNEL_CHUNK, get_axis_index
from .errors import KernelContractError

logger = logging.getLogger(__name__)

FOUR_PI_EPS0 = 4.0 * np.pi * EPS0

# 二阶差分权重：偏移 (e2-s1, s2-e1, e2-e1, s2-s1)
_SECOND_WEIGHTS = np.array([1.0, 1.0, -1.0, -1.0])
# 一阶差分权重
_FIRST_WEIGHTS = np.array([1.0, -1.0])


@dataclass(frozen=True)
class DielectricJump:
    """介质界面的介电常数跳变（相对值）"""
    eps_d: float
    eps_b: float
    area: float = 1.0


@dataclass(frozen=True)
class PanelPairGeometry:
    """两个轴对齐矩形面板的相对几何

    lo/hi 为形如 (3,) 或 (n, 3) 的角点坐标，法向轴上 lo == hi。
    """
    obs_axis: int
    src_axis: int
    obs_lo: np.ndarray
    obs_hi: np.ndarray
    src_lo: np.ndarray
    src_hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "obs_axis", get_axis_index(self.obs_axis))
        object.__setattr__(self, "src_axis", get_axis_index(self.src_axis))
        for name in ("obs_lo", "obs_hi", "src_lo", "src_hi"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for lo, hi, axis in ((self.obs_lo, self.obs_hi, self.obs_axis),
                             (self.src_lo, self.src_hi, self.src_axis)):
            in_plane = [a for a in range(3) if a != axis]
            if not (hi[:, in_plane] > lo[:, in_plane]).all():
                raise KernelContractError("面板尺寸必须为正（e 坐标大于 s 坐标）")
            if not np.array_equal(lo[:, axis], hi[:, axis]):
                raise KernelContractError("面板在法向上必须无厚度")

    @classmethod
    def from_centers(cls, obs_axis, obs_center, src_axis, src_center,
                     edge: float = 1.0) -> "PanelPairGeometry":
        """由中心点构造边长为 edge 的正方形面板对"""
        obs_lo, obs_hi = _square(get_axis_index(obs_axis), obs_center, edge)
        src_lo, src_hi = _square(get_axis_index(src_axis), src_center, edge)
        return cls(obs_axis, src_axis, obs_lo, obs_hi, src_lo, src_hi)

    @property
    def configuration(self) -> str:
        """parallel | orthogonal | identical（批量时以首个为准判断 identical）"""
        if self.obs_axis != self.src_axis:
            return "orthogonal"
        if (np.array_equal(self.obs_lo, self.src_lo) and np.array_equal(self.obs_hi, self.src_hi)):
            return "identical"
        return "parallel"

    def swapped(self) -> "PanelPairGeometry":
        """交换源与观察面板"""
        return PanelPairGeometry(self.src_axis, self.obs_axis,
                                 self.src_lo, self.src_hi, self.obs_lo, self.obs_hi)

    def scaled(self, factor: float) -> "PanelPairGeometry":
        return PanelPairGeometry(self.obs_axis, self.src_axis,
                                 self.obs_lo * factor, self.obs_hi * factor,
                                 self.src_lo * factor, self.src_hi * factor)

    def __len__(self) -> int:
        return self.obs_lo.shape[0]


def _square(axis: int, center, edge: float) -> Tuple[np.ndarray, np.ndarray]:
    center = np.atleast_2d(np.asarray(center, dtype=float))
    half = np.full(3, 0.5 * edge)
    half[axis] = 0.0
    return center - half, center + half


# ---------------------------------------------------------------------------
# 数值工具
# ---------------------------------------------------------------------------

def _log_plus(u: np.ndarray, r: np.ndarray, rest: np.ndarray) -> np.ndarray:
    """ln(u + r)，u < 0 时改写为 ln(rest) − ln(r − u)，rest = r² − u²"""
    with np.errstate(divide="ignore", invalid="ignore"):
        positive = np.log(u + r + EPS_REG)
        negative = np.log(rest + EPS_REG) - np.log(r - u)
    return np.where(u >= 0, positive, negative)


def _xlog(coef: np.ndarray, u: np.ndarray, r: np.ndarray, rest: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.where(coef == 0, 0.0, coef * _log_plus(u, r, rest))


def _atan_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """arctan(num / den)，den = 0 时取 ±π/2"""
    return np.arctan2(np.where(den < 0, -num, num), np.abs(den))


def _xatan(coef: np.ndarray, num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.where(coef == 0, 0.0, coef * _atan_ratio(num, den))


def _second_difference(s1, e1, s2, e2) -> np.ndarray:
    """观察区间 [s1, e1] 与源区间 [s2, e2] 的四个偏移，形状 (4, n)"""
    return np.stack([e2 - s1, s2 - e1, e2 - e1, s2 - s1])


def _in_plane_axes(axis: int) -> Tuple[int, int]:
    u, v = (a for a in range(3) if a != axis)
    return u, v


# ---------------------------------------------------------------------------
# 闭式原函数
# ---------------------------------------------------------------------------

def _parallel_potential_primitive(a, b, z):
    r2 = a * a + b * b + z * z
    r = np.sqrt(r2)
    result = _xlog(0.5 * (a * a - z * z) * b, b, r, a * a + z * z)
    result += _xlog(0.5 * (b * b - z * z) * a, a, r, b * b + z * z)
    result -= (a * a + b * b - 2.0 * z * z) * r / 6.0
    result -= _xatan(a * b * z, a * b, z * r)
    return result


def _parallel_field_primitive(a, b, z):
    """上式对 z 的导数（去掉差分后为零的项）"""
    r = np.sqrt(a * a + b * b + z * z)
    result = z * r
    result -= _xlog(z * a, a, r, b * b + z * z)
    result -= _xlog(z * b, b, r, a * a + z * z)
    result -= _xatan(a * b, a * b, z * r)
    return result


def _orthogonal_potential_primitive(a, b, c):
    r = np.sqrt(a * a + b * b + c * c)
    result = _xlog(a * b * c, a, r, b * b + c * c)
    result += _xlog(0.5 * a * a * c - c ** 3 / 6.0, b, r, a * a + c * c)
    result += _xlog(0.5 * a * a * b - b ** 3 / 6.0, c, r, a * a + b * b)
    result -= b * c * r / 3.0
    result -= _xatan(a ** 3 / 6.0, b * c, a * r)
    result -= _xatan(0.5 * a * b * b, a * c, b * r)
    result -= _xatan(0.5 * a * c * c, a * b, c * r)
    return result


def _orthogonal_field_primitive(a, b, c):
    """上式对 c 的导数（去掉差分后为零的项）"""
    r = np.sqrt(a * a + b * b + c * c)
    result = _xlog(0.5 * (a * a - c * c), b, r, a * a + c * c)
    result += _xlog(a * b, a, r, b * b + c * c)
    result -= 0.5 * b * r
    result -= _xatan(a * c, a * b, c * r)
    return result


def _parallel_sum(pair: PanelPairGeometry, primitive) -> np.ndarray:
    n = pair.obs_axis
    u, v = _in_plane_axes(n)
    a = _second_difference(pair.obs_lo[:, u], pair.obs_hi[:, u], pair.src_lo[:, u], pair.src_hi[:, u])
    b = _second_difference(pair.obs_lo[:, v], pair.obs_hi[:, v], pair.src_lo[:, v], pair.src_hi[:, v])
    z = pair.src_lo[:, n] - pair.obs_lo[:, n] + EPS_REG
    values = primitive(a[:, None, :], b[None, :, :], z[None, None, :])
    weights = _SECOND_WEIGHTS[:, None, None] * _SECOND_WEIGHTS[None, :, None]
    return np.sum(weights * values, axis=(0, 1))


def _orthogonal_sum(pair: PanelPairGeometry, primitive) -> np.ndarray:
    alpha, beta = pair.obs_axis, pair.src_axis
    gamma = 3 - alpha - beta
    a = _second_difference(pair.obs_lo[:, gamma], pair.obs_hi[:, gamma],
                           pair.src_lo[:, gamma], pair.src_hi[:, gamma])
    # 观察面板沿 β 展开，源面板位于 β 向坐标 y2
    y2 = pair.src_lo[:, beta]
    b = np.stack([y2 - pair.obs_lo[:, beta], y2 - pair.obs_hi[:, beta]])
    # 源面板沿 α 展开，观察面板位于 α 向坐标 z1
    z1 = pair.obs_lo[:, alpha]
    c = np.stack([pair.src_hi[:, alpha] - z1, pair.src_lo[:, alpha] - z1])
    values = primitive(a[:, None, None, :], b[None, :, None, :], c[None, None, :, :])
    weights = (_SECOND_WEIGHTS[:, None, None, None]
               * _FIRST_WEIGHTS[None, :, None, None]
               * _FIRST_WEIGHTS[None, None, :, None])
    return np.sum(weights * values, axis=(0, 1, 2))


def _closed_potential(pair: PanelPairGeometry) -> np.ndarray:
    if pair.obs_axis == pair.src_axis:
        return _parallel_sum(pair, _parallel_potential_primitive) / FOUR_PI_EPS0
    return _orthogonal_sum(pair, _orthogonal_potential_primitive) / FOUR_PI_EPS0


def _closed_field(pair: PanelPairGeometry) -> np.ndarray:
    if pair.obs_axis == pair.src_axis:
        values = -_parallel_sum(pair, _parallel_field_primitive) / FOUR_PI_EPS0
        # 重合面板的跳变项归入 diagonal_entry
        coincident = np.all(pair.obs_lo == pair.src_lo, axis=1) & np.all(pair.obs_hi == pair.src_hi, axis=1)
        return np.where(coincident, 0.0, values)
    return -_orthogonal_sum(pair, _orthogonal_field_primitive) / FOUR_PI_EPS0


# ---------------------------------------------------------------------------
# 远场 Gauss 积分
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _gauss_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(order)
    return nodes, weights


def _panel_nodes(lo: np.ndarray, hi: np.ndarray, axis: int, order: int):
    """面板上的张量积 Gauss 节点与权重，形状 (n, q, 3) / (n, q)"""
    nodes, weights = _gauss_rule(order)
    u, v = _in_plane_axes(axis)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nu, nv = np.meshgrid(nodes, nodes, indexing="ij")
    wu, wv = np.meshgrid(weights, weights, indexing="ij")
    points = np.repeat(mid[:, None, :], order * order, axis=1)
    points[:, :, u] += half[:, None, u] * nu.ravel()[None, :]
    points[:, :, v] += half[:, None, v] * nv.ravel()[None, :]
    w = (wu * wv).ravel()[None, :] * (half[:, u] * half[:, v])[:, None]
    return points, w


def _gauss_values(pair: PanelPairGeometry, which: str, order: int) -> np.ndarray:
    obs_pts, obs_w = _panel_nodes(pair.obs_lo, pair.obs_hi, pair.obs_axis, order)
    src_pts, src_w = _panel_nodes(pair.src_lo, pair.src_hi, pair.src_axis, order)
    diff = obs_pts[:, :, None, :] - src_pts[:, None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    weights = obs_w[:, :, None] * src_w[:, None, :]
    if which == "A":
        kernel = 1.0 / dist
    else:
        kernel = -diff[..., pair.obs_axis] / dist ** 3
    return np.sum(weights * kernel, axis=(1, 2)) / FOUR_PI_EPS0


def _near_mask(pair: PanelPairGeometry, threshold: float) -> np.ndarray:
    """中心距离不超过 threshold 个面板边长的为近场"""
    obs_c = 0.5 * (pair.obs_lo + pair.obs_hi)
    src_c = 0.5 * (pair.src_lo + pair.src_hi)
    edge = np.maximum(np.max(pair.obs_hi - pair.obs_lo, axis=1), np.max(pair.src_hi - pair.src_lo, axis=1))
    dist2 = np.sum(((obs_c - src_c) / edge[:, None]) ** 2, axis=1)
    return dist2 <= threshold * threshold + 1e-9


def _subset(pair: PanelPairGeometry, index) -> PanelPairGeometry:
    return PanelPairGeometry(pair.obs_axis, pair.src_axis,
                             pair.obs_lo[index], pair.obs_hi[index],
                             pair.src_lo[index], pair.src_hi[index])


def _evaluate(pair: PanelPairGeometry, which: str, near_threshold: Optional[float],
              order: Optional[int]) -> np.ndarray:
    threshold = DEFAULT_SOLVER["near_threshold"] if near_threshold is None else float(near_threshold)
    order = DEFAULT_SOLVER["quadrature_order"] if order is None else int(order)
    closed = _closed_potential if which == "A" else _closed_field

    out = np.empty(len(pair))
    for start in range(0, len(pair), KERNEL_CHUNK):
        chunk = _subset(pair, slice(start, start + KERNEL_CHUNK))
        near = _near_mask(chunk, threshold)
        values = np.empty(len(chunk))
        if near.any():
            values[near] = closed(_subset(chunk, near))
        if not near.all():
            values[~near] = _gauss_values(_subset(chunk, ~near), which, order)
        out[start:start + len(chunk)] = values
    return out


# ---------------------------------------------------------------------------
# 公开接口
# ---------------------------------------------------------------------------

def potential_integral(pair: PanelPairGeometry, near_threshold: float = None,
                       order: int = None):
    """势积分 ∫∫ G dS' dS

    Args:
        pair: 面板对几何（可批量）
        near_threshold: 近场阈值（面板边长倍数）
        order: 远场每个方向的 Gauss 点数

    Returns:
        单个面板对返回 float，批量返回数组
    """
    values = _evaluate(pair, "A", near_threshold, order)
    return float(values[0]) if len(pair) == 1 else values


def efield_integral(pair: PanelPairGeometry, near_threshold: float = None,
                    order: int = None):
    """观察面板法向上的场积分（近场闭式，远场 Gauss），重合面板返回 0"""
    values = _evaluate(pair, "B", near_threshold, order)
    return float(values[0]) if len(pair) == 1 else values


def efield_integral_parallel(pair: PanelPairGeometry):
    """平行面板法向场积分的闭式结果"""
    if pair.obs_axis != pair.src_axis:
        raise KernelContractError("efield_integral_parallel 需要平行面板")
    values = -_parallel_sum(pair, _parallel_field_primitive) / FOUR_PI_EPS0
    return float(values[0]) if len(pair) == 1 else values


def efield_integral_orthogonal(pair: PanelPairGeometry):
    """正交面板法向场积分的闭式结果"""
    if pair.obs_axis == pair.src_axis:
        raise KernelContractError("efield_integral_orthogonal 需要正交面板")
    values = -_orthogonal_sum(pair, _orthogonal_field_primitive) / FOUR_PI_EPS0
    return float(values[0]) if len(pair) == 1 else values


def diagonal_entry(jump: DielectricJump = None, *, area: float = None,
                   eps_d=None, eps_b=None):
    """重合介质面板的对角项 A(ε_d + ε_b) / (2ε₀(ε_d − ε_b))

    Args:
        jump: 介电常数跳变；也可以直接给出 area / eps_d / eps_b（支持数组）

    Returns:
        对角项数值
    """
    if jump is not None:
        area, eps_d, eps_b = jump.area, jump.eps_d, jump.eps_b
    eps_d = np.asarray(eps_d, dtype=float)
    eps_b = np.asarray(eps_b, dtype=float)
    if np.any(eps_d == eps_b):
        raise KernelContractError("ε_d 与 ε_b 相等的界面不应存在介质面板")
    if np.any(eps_d <= 0) or np.any(eps_b <= 0):
        raise KernelContractError("介电常数必须为正")
    value = area * (eps_d + eps_b) / (2.0 * EPS0 * (eps_d - eps_b))
    return float(value) if np.ndim(value) == 0 else value


def interaction_values(which: str, obs_axis, src_axis, offsets: np.ndarray, edge: float,
                       near_threshold: float = None, order: int = None) -> np.ndarray:
    """按中心偏移批量计算单元面板对的相互作用

    Args:
        which: "A"（势）或 "B"（法向场）
        obs_axis: 观察面板法向
        src_axis: 源面板法向
        offsets: (n, 3) 观察中心 − 源中心（物理长度）
        edge: 面板边长

    Returns:
        (n,) 数值
    """
    if which not in ("A", "B"):
        raise KernelContractError(f"未知张量类型: {which}")
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    if len(offsets) == 0:
        return np.zeros(0)
    pair = PanelPairGeometry.from_centers(obs_axis, offsets, src_axis, np.zeros_like(offsets), edge)
    return _evaluate(pair, which, near_threshold, order)
