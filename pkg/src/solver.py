"""GMRES 求解与电容矩阵提取模块"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from .config import DEFAULT_SOLVER, DENSE_ORACLE_LIMIT, EPS0, PRECONDITIONER_MODES
from .errors import KernelContractError, SolverError, StructureError
from .fft_engine import dielectric_diagonal
from .geometry import PanelSet, StructureDescription, build_grid, enumerate_panels
from .kernel import interaction_values
from .toeplitz import half_shift

logger = logging.getLogger(__name__)

# 正交性损失判据：正交化后范数小于原范数的该比例时再做一次
_REORTH_RATIO = 0.7


@dataclass
class SolverConfig:
    """求解器配置，默认值来自 DEFAULT_SOLVER"""
    restart: int = DEFAULT_SOLVER["restart"]
    rre: float = DEFAULT_SOLVER["rre"]
    max_iterations: int = DEFAULT_SOLVER["max_iterations"]
    preconditioner: str = DEFAULT_SOLVER["preconditioner"]
    box_dims: Tuple[int, int, int] = DEFAULT_SOLVER["box_dims"]
    tucker_tol: Optional[float] = DEFAULT_SOLVER["tucker_tol"]
    compress_circulants: bool = DEFAULT_SOLVER["compress_circulants"]
    near_threshold: float = DEFAULT_SOLVER["near_threshold"]
    quadrature_order: int = DEFAULT_SOLVER["quadrature_order"]
    fft_workers: Optional[int] = DEFAULT_SOLVER["fft_workers"]
    workers: int = DEFAULT_SOLVER["workers"]

    def __post_init__(self):
        self.box_dims = tuple(int(b) for b in self.box_dims)
        if int(self.restart) < 1:
            raise StructureError(f"restart 必须 ≥ 1: {self.restart}")
        if not 0.0 < float(self.rre) < 1.0:
            raise StructureError(f"RRE 必须位于 (0, 1): {self.rre}")
        if int(self.max_iterations) < 1:
            raise StructureError(f"最大迭代次数必须 ≥ 1: {self.max_iterations}")
        if self.preconditioner not in PRECONDITIONER_MODES:
            raise StructureError(
                f"未知预条件模式: {self.preconditioner}，可选 {list(PRECONDITIONER_MODES)}"
            )
        if len(self.box_dims) != 3 or min(self.box_dims) < 1:
            raise StructureError(f"盒尺寸必须为 3 个正整数: {self.box_dims}")
        if self.tucker_tol is not None and not 0.0 < float(self.tucker_tol) < 1.0:
            raise StructureError(f"Tucker 容差必须位于 (0, 1): {self.tucker_tol}")
        if not float(self.near_threshold) >= 0.0:
            raise StructureError(f"近场阈值不能为负: {self.near_threshold}")
        if int(self.quadrature_order) < 1:
            raise StructureError(f"积分阶数必须 ≥ 1: {self.quadrature_order}")
        if int(self.workers) < 1:
            raise StructureError(f"线程数必须 ≥ 1: {self.workers}")

    @classmethod
    def from_dict(cls, overrides: Dict[str, Any] = None) -> "SolverConfig":
        """以默认配置为底合并覆盖项，None 值视为未设置"""
        known = {f.name for f in fields(cls)}
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        unknown = set(overrides) - known
        if unknown:
            raise StructureError(f"未知求解器配置项: {sorted(unknown)}")
        merged = {**DEFAULT_SOLVER, **overrides}
        return cls(**{k: merged[k] for k in known if k in merged})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["box_dims"] = list(self.box_dims)
        return data


@dataclass
class GMRESResult:
    """GMRES 求解结果"""
    solution: np.ndarray
    iterations: int
    rre_history: List[float]
    converged: bool
    rre: float
    true_rre: float
    cycles: int = 0
    seconds: float = 0.0


def _givens(a: float, b: float) -> Tuple[float, float]:
    """[c s; -s c]·[a; b] = [r; 0]"""
    if b == 0.0:
        return 1.0, 0.0
    r = math.hypot(a, b)
    return a / r, b / r


def _identity(r: np.ndarray) -> np.ndarray:
    return r


def gmres_solve(rhs: np.ndarray, mvm: Callable, precond: Callable = None,
                config: SolverConfig = None, x0: np.ndarray = None) -> GMRESResult:
    """左预条件重启 GMRES

    Args:
        rhs: 右端项 b
        mvm: x -> A x
        precond: r -> R r，为空时不预条件
        config: 求解器配置（restart, rre, max_iterations）
        x0: 初值，默认零向量

    Returns:
        GMRESResult；超过最大迭代次数时返回当前最优解且 converged 为 False
    """
    config = config or SolverConfig()
    precond = precond or _identity
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    start = time.perf_counter()

    pb_norm = float(np.linalg.norm(precond(b)))
    b_norm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if pb_norm == 0.0:
        return GMRESResult(np.zeros(n), 0, [], True, 0.0, 0.0, 0, time.perf_counter() - start)

    tol = float(config.rre)
    restart = min(int(config.restart), n)
    history: List[float] = []
    iterations = 0
    cycles = 0
    converged = False

    while iterations < config.max_iterations:
        r = precond(b - mvm(x)) if (cycles or x0 is not None) else precond(b)
        beta = float(np.linalg.norm(r))
        if beta / pb_norm <= tol:
            converged = True
            break
        cycles += 1

        basis = np.zeros((restart + 1, n))
        hess = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        basis[0] = r / beta

        steps = 0
        breakdown = False
        for j in range(restart):
            w = precond(mvm(basis[j]))
            iterations += 1
            steps = j + 1
            w_norm = float(np.linalg.norm(w))

            # 修正 Gram-Schmidt
            for i in range(j + 1):
                h = float(np.dot(basis[i], w))
                hess[i, j] = h
                w -= h * basis[i]
            if np.linalg.norm(w) < _REORTH_RATIO * w_norm:
                for i in range(j + 1):
                    h = float(np.dot(basis[i], w))
                    hess[i, j] += h
                    w -= h * basis[i]

            hess[j + 1, j] = float(np.linalg.norm(w))
            breakdown = hess[j + 1, j] <= 1e-14 * max(w_norm, 1e-300)
            if not breakdown:
                basis[j + 1] = w / hess[j + 1, j]

            for i in range(j):
                temp = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = temp
            cs[j], sn[j] = _givens(hess[j, j], hess[j + 1, j])
            hess[j, j] = cs[j] * hess[j, j] + sn[j] * hess[j + 1, j]
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            estimate = abs(g[j + 1]) / pb_norm
            history.append(float(estimate))
            if estimate <= tol or breakdown or iterations >= config.max_iterations:
                break

        y = scipy.linalg.solve_triangular(hess[:steps, :steps], g[:steps])
        x = x + basis[:steps].T @ y
        logger.debug("GMRES 第 %d 轮: %d 次迭代, RRE %.3e", cycles, steps, history[-1])

        if history[-1] <= tol:
            converged = True
            break
        if breakdown:
            break

    residual = b - mvm(x)
    rre = float(np.linalg.norm(precond(residual))) / pb_norm
    true_rre = float(np.linalg.norm(residual)) / b_norm if b_norm else 0.0
    if not converged:
        converged = rre <= tol
    return GMRESResult(x, iterations, history, converged, rre, true_rre, cycles,
                       time.perf_counter() - start)


@dataclass
class Excitation:
    """导体电位激励：V_k = A_k·Φ_k（导体行），介质行为 0"""
    potentials: Dict[int, float]

    @classmethod
    def unit(cls, conductor_ids, k: int) -> "Excitation":
        """第 k 个导体 1 V，其余 0 V"""
        return cls({cid: (1.0 if cid == k else 0.0) for cid in conductor_ids})

    def rhs(self, panels: PanelSet) -> np.ndarray:
        v = np.zeros(len(panels))
        for idx, cid in enumerate(panels.conductor_ids, start=1):
            phi = self.potentials.get(cid, 0.0)
            if phi:
                v[panels.conductor_mask(idx)] = panels.area * phi
        return v


def unit_excitations(panels: PanelSet) -> np.ndarray:
    """全部单位激励的右端项矩阵 V̄（N × m）"""
    return np.column_stack([
        Excitation.unit(panels.conductor_ids, cid).rhs(panels) for cid in panels.conductor_ids
    ]) if panels.conductor_ids else np.zeros((len(panels), 0))


def free_charges(charges: np.ndarray, panels: PanelSet) -> np.ndarray:
    """导体电荷乘外侧介质相对介电常数换算为自由电荷"""
    scale = panels.eps_b[:panels.n_conductor]
    return charges[:panels.n_conductor] * scale[:, None]


def capacitance_from_charges(charges: np.ndarray, panels: PanelSet,
                             excitations: np.ndarray = None) -> np.ndarray:
    """C̄ = V̄ᵀ ρ̄_c（ρ̄_c 为自由电荷）"""
    if excitations is None:
        excitations = unit_excitations(panels)
    return excitations[:panels.n_conductor].T @ free_charges(charges, panels)


def coated_sphere_capacitance(r_c: float, r_d: float, eps_r: float) -> float:
    """介质包覆导体球的解析电容 C = 4πε₀ε_r r_d r_c / ((r_d − r_c) + ε_r r_c)"""
    if not 0.0 < r_c < r_d or not eps_r > 0:
        raise StructureError(f"包覆球参数非法: r_c={r_c}, r_d={r_d}, eps_r={eps_r}")
    return 4.0 * math.pi * EPS0 * eps_r * r_d * r_c / ((r_d - r_c) + eps_r * r_c)


@dataclass
class ExtractionResult:
    """电容提取结果"""
    conductor_ids: Tuple[int, ...]
    capacitance: np.ndarray
    charges: np.ndarray
    free_charges: np.ndarray
    converged: List[bool]
    iterations: List[int]
    panels: Optional[PanelSet] = None
    telemetry: Dict[str, Any] = field(default_factory=dict)

    @property
    def conductor_charges(self) -> np.ndarray:
        n_c = self.panels.n_conductor if self.panels is not None else len(self.free_charges)
        return self.charges[:n_c]

    @property
    def dielectric_charges(self) -> np.ndarray:
        n_c = self.panels.n_conductor if self.panels is not None else len(self.free_charges)
        return self.charges[n_c:]

    @property
    def failures(self) -> List[int]:
        """未收敛的激励（导体 id）"""
        return [cid for cid, ok in zip(self.conductor_ids, self.converged) if not ok]

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def assemble_dense(panels: PanelSet, near_threshold: float = None, order: int = None,
                   limit: int = DENSE_ORACLE_LIMIT) -> np.ndarray:
    """逐项组装完整系统矩阵（小规模参考）

    Args:
        panels: 面板集合
        near_threshold: 近场阈值（面板边长单位）
        order: 远场 Gauss 阶数
        limit: 面板数上限

    Returns:
        N × N 稠密矩阵
    """
    n = len(panels)
    if n > limit:
        raise SolverError(f"稠密参考解面板数 {n} 超过上限 {limit}")
    edge = panels.voxel_edge
    conductor = panels.is_conductor
    signs = panels.sign.astype(float)
    matrix = np.zeros((n, n))
    for alpha in range(3):
        rows = np.flatnonzero(panels.axis == alpha)
        if len(rows) == 0:
            continue
        for beta in range(3):
            cols = np.flatnonzero(panels.axis == beta)
            if len(cols) == 0:
                continue
            d = (panels.slot[rows][:, None, :] - panels.slot[cols][None, :, :]).reshape(-1, 3)
            unique, inverse = np.unique(d, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            offsets = (unique + half_shift(alpha, beta) / 2.0) * edge
            block = interaction_values("A", alpha, beta, offsets, edge, near_threshold, order)[inverse]
            block = block.reshape(len(rows), len(cols))
            if not conductor[rows].all():
                field_block = interaction_values("B", alpha, beta, offsets, edge,
                                                 near_threshold, order)[inverse]
                field_block = field_block.reshape(len(rows), len(cols))
                block = np.where(conductor[rows][:, None], block, signs[rows][:, None] * field_block)
            matrix[np.ix_(rows, cols)] = block
    matrix[np.diag_indices(n)] += dielectric_diagonal(panels)
    return matrix


def _panels_of(structure: Union[StructureDescription, PanelSet]) -> PanelSet:
    if isinstance(structure, PanelSet):
        return structure
    if isinstance(structure, StructureDescription):
        return enumerate_panels(build_grid(structure.normalized()))
    raise KernelContractError(f"不支持的结构类型: {type(structure).__name__}")


def dense_oracle(structure: Union[StructureDescription, PanelSet], near_threshold: float = None,
                 order: int = None, limit: int = DENSE_ORACLE_LIMIT
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """稠密直接求解的参考电容

    Returns:
        (系统矩阵, 参考电容矩阵)
    """
    panels = _panels_of(structure)
    if panels.n_conductor == 0:
        raise StructureError("结构中没有导体")
    matrix = assemble_dense(panels, near_threshold, order, limit)
    excitations = unit_excitations(panels)
    charges = scipy.linalg.lu_solve(scipy.linalg.lu_factor(matrix), excitations)
    return matrix, capacitance_from_charges(charges, panels, excitations)


def extract_capacitance(structure: StructureDescription, config: SolverConfig = None,
                        cache_dir=None, progress_callback: Callable = None) -> ExtractionResult:
    """完整提取流程（几何 → 核张量 → FFT → 预条件 → GMRES → 电容）"""
    from .extractor import CapacitanceExtractor

    extractor = CapacitanceExtractor(config or SolverConfig(), cache_dir=cache_dir)
    return extractor.run(structure, progress_callback=progress_callback)
