"""电容提取流程编排模块"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np

from . import preconditioner as precond_module
from .errors import StructureError
from .fft_engine import FFTOperator, dielectric_diagonal, time_convolution
from .geometry import PanelSet, StructureDescription, VoxelGrid, build_grid, enumerate_panels
from .kernel_cache import load_cached_toeplitz
from .solver import (
    ExtractionResult,
    SolverConfig,
    capacitance_from_charges,
    free_charges,
    gmres_solve,
    unit_excitations,
)
from .toeplitz import (
    CirculantKernelSet,
    ToeplitzKernelSet,
    compress_circulants,
    embed_circulant,
    fft_circulants,
    generate_kernel_set,
    resize_toeplitz,
)
from .version import __version__

logger = logging.getLogger(__name__)


@dataclass
class ExtractionSetup:
    """一次提取的共享准备结果（求解各列时只读）"""
    grid: VoxelGrid
    panels: PanelSet
    toeplitz: ToeplitzKernelSet
    circulants: CirculantKernelSet
    operator: FFTOperator
    preconditioner: precond_module.Preconditioner
    diag: np.ndarray
    kernel_source: str
    stages: Dict[str, float] = field(default_factory=dict)
    memory: Dict[str, Any] = field(default_factory=dict)


class CapacitanceExtractor:
    """电容提取器：准备阶段 + 逐列求解"""

    def __init__(self, config: SolverConfig = None, cache_dir=None, use_cache: bool = True):
        self.config = config or SolverConfig()
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.use_cache = use_cache and self.cache_dir is not None

    def _load_kernels(self, grid: VoxelGrid, stages: Dict[str, float],
                      progress_callback: Callable = None):
        """优先读取缓存，缺失或尺寸不足时直接生成"""
        if self.use_cache:
            kernels, timings = load_cached_toeplitz(self.cache_dir, grid.dims, grid.voxel_edge)
            if kernels is not None:
                stages["reading_cache"] = timings["read_seconds"]
                stages["restoring"] = timings["restore_seconds"]
                return kernels, "cache"
            logger.warning("缓存不可用，改为直接生成 Toeplitz 张量")

        def filling_callback(percent: int, message: str) -> None:
            # 生成进度映射到 15%~40% 区间
            if progress_callback:
                progress_callback(15 + percent * 25 // 100, message)

        start = time.perf_counter()
        kernels = generate_kernel_set(
            grid.dims, grid.voxel_edge,
            near_threshold=self.config.near_threshold,
            order=self.config.quadrature_order,
            workers=self.config.workers,
            progress_callback=filling_callback,
        )
        stages["filling"] = time.perf_counter() - start
        return kernels, "direct"

    def setup(self, structure: StructureDescription,
              progress_callback: Callable = None) -> ExtractionSetup:
        """准备阶段：几何、核张量、循环嵌入、FFT、压缩、预条件子

        Args:
            structure: 结构描述
            progress_callback: 进度回调 (percent, message)

        Returns:
            ExtractionSetup
        """
        cfg = self.config
        stages: Dict[str, float] = {}

        if progress_callback:
            progress_callback(5, "构建体素网格...")
        start = time.perf_counter()
        grid = build_grid(structure.normalized())
        panels = enumerate_panels(grid)
        if panels.n_conductor == 0:
            raise StructureError("结构中没有导体面板")
        stages["preprocessing"] = time.perf_counter() - start

        if progress_callback:
            progress_callback(15, "准备 Toeplitz 张量...")
        toeplitz, source = self._load_kernels(grid, stages, progress_callback)

        if progress_callback:
            progress_callback(40, "循环嵌入...")
        start = time.perf_counter()
        circulants = embed_circulant(toeplitz)
        stages["embedding"] = time.perf_counter() - start

        if progress_callback:
            progress_callback(50, "循环张量 FFT...")
        start = time.perf_counter()
        circulants = fft_circulants(circulants, workers=cfg.fft_workers)
        stages["fft_circulants"] = time.perf_counter() - start
        memory = {
            "toeplitz_bytes": int(toeplitz.nbytes),
            "circulant_raw_bytes": int(circulants.raw_nbytes),
        }

        if cfg.compress_circulants and cfg.tucker_tol:
            if progress_callback:
                progress_callback(60, "压缩循环张量...")
            start = time.perf_counter()
            circulants = compress_circulants(circulants, cfg.tucker_tol, workers=cfg.workers)
            stages["compressing_circulants"] = time.perf_counter() - start
        memory["circulant_stored_bytes"] = int(circulants.nbytes)
        memory["compression_ratio"] = memory["circulant_raw_bytes"] / max(circulants.nbytes, 1)

        if progress_callback:
            progress_callback(70, "构建预条件子...")
        start = time.perf_counter()
        diag = dielectric_diagonal(panels)
        precond = self.build_preconditioner(panels, grid, toeplitz, diag)
        stages["preconditioner"] = time.perf_counter() - start
        memory["preconditioner"] = precond.summary()

        operator = FFTOperator(circulants, panels, diag, workers=cfg.fft_workers)
        return ExtractionSetup(grid, panels, toeplitz, circulants, operator, precond,
                               diag, source, stages, memory)

    def build_preconditioner(self, panels: PanelSet, grid: VoxelGrid, toeplitz: ToeplitzKernelSet,
                             diag: np.ndarray, mode: str = None) -> precond_module.Preconditioner:
        """按配置的盒尺寸构建预条件子；mode 缺省时取配置中的模式"""
        cfg = self.config
        box_dims = tuple(min(b, n) for b, n in zip(cfg.box_dims, grid.dims))
        small = resize_toeplitz(toeplitz, box_dims)
        return precond_module.build(panels, grid, box_dims, small, diag,
                                    mode=mode or cfg.preconditioner, workers=cfg.workers)

    def solve(self, setup: ExtractionSetup, progress_callback: Callable = None) -> ExtractionResult:
        """逐个导体施加单位电位并求解"""
        panels = setup.panels
        excitations = unit_excitations(panels)
        m = excitations.shape[1]
        charges = np.zeros((len(panels), m))
        converged, iterations, solver_rows = [], [], []

        for col, cid in enumerate(panels.conductor_ids):
            if progress_callback:
                progress_callback(75 + int(20 * col / m), f"求解导体 {cid} 的激励...")
            result = gmres_solve(excitations[:, col], setup.operator, setup.preconditioner, self.config)
            charges[:, col] = result.solution
            converged.append(result.converged)
            iterations.append(result.iterations)
            solver_rows.append({
                "conductor": cid,
                "iterations": result.iterations,
                "converged": result.converged,
                "rre": result.rre,
                "true_rre": result.true_rre,
                "seconds": result.seconds,
            })
            if result.converged:
                logger.info("导体 %s: %d 次迭代收敛, RRE %.2e", cid, result.iterations, result.rre)
            else:
                logger.warning("导体 %s 未收敛: %d 次迭代, RRE %.2e", cid, result.iterations, result.rre)

        capacitance = capacitance_from_charges(charges, panels, excitations)
        telemetry = self._telemetry(setup, solver_rows)
        return ExtractionResult(
            conductor_ids=tuple(panels.conductor_ids),
            capacitance=capacitance,
            charges=charges,
            free_charges=free_charges(charges, panels),
            converged=converged,
            iterations=iterations,
            panels=panels,
            telemetry=telemetry,
        )

    def _telemetry(self, setup: ExtractionSetup, solver_rows) -> Dict[str, Any]:
        """按阶段汇总耗时、内存与压缩指标"""
        stats = setup.operator.stats()
        memory = dict(setup.memory)
        if setup.circulants.compressed and stats["restore_count"]:
            conv = time_convolution(setup.circulants.shape, self.config.fft_workers)
            restore = stats["restore_seconds"] / stats["restore_count"]
            memory["restore_seconds_per_tensor"] = restore
            memory["convolution_seconds"] = conv
            memory["computational_overhead"] = restore / conv if conv > 0 else None
        grid = setup.grid
        return {
            "version": __version__,
            "structure": {
                "dims": list(grid.dims),
                "voxel_size": grid.voxel_edge,
                "n_voxels": grid.n_voxels,
                "conductors": list(setup.panels.conductor_ids),
                **setup.panels.summary(),
            },
            "kernel_source": setup.kernel_source,
            "config": self.config.to_dict(),
            "stages": dict(setup.stages),
            "memory": memory,
            "fft": {
                "mvm_count": stats["mvm_count"],
                "forward_per_mvm": stats["forward_ffts"] / max(stats["mvm_count"], 1),
                "inverse_per_mvm": stats["inverse_ffts"] / max(stats["mvm_count"], 1),
                "stored_potential_tensors": stats["stored_potential_tensors"],
                "max_materialized": stats["max_materialized"],
            },
            "solver": solver_rows,
        }

    def run(self, structure: StructureDescription,
            progress_callback: Callable = None) -> ExtractionResult:
        """准备 + 求解"""
        start = time.perf_counter()
        setup = self.setup(structure, progress_callback)
        setup_seconds = time.perf_counter() - start
        result = self.solve(setup, progress_callback)
        result.telemetry["stages"]["setup_total"] = setup_seconds
        result.telemetry["stages"]["solve_total"] = sum(r["seconds"] for r in result.telemetry["solver"])
        result.telemetry["stages"]["total"] = time.perf_counter() - start
        if progress_callback:
            progress_callback(100, "提取完成")
        return result
