"""配置文件"""

import os
from pathlib import Path

# 真空介电常数 (F/m)
EPS0 = 8.8541878128e-12

# 闭式积分中的正则化常数，固定不可配置
EPS_REG = 1e-37

# 坐标轴
AXES = ("x", "y", "z")
AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

# 求解器默认配置
DEFAULT_SOLVER = {
    "restart": 35,
    "rre": 1e-4,
    "max_iterations": 2000,
    "preconditioner": "hybrid",
    "box_dims": (10, 10, 10),
    "tucker_tol": 1e-8,
    "compress_circulants": True,
    "near_threshold": 5.0,
    "quadrature_order": 4,
    "fft_workers": None,
    "workers": 4,
}

# 高精度模式的残差目标
HIGH_ACCURACY_RRE = 1e-8

# 预条件子模式
PRECONDITIONER_MODES = {
    "hybrid": "导体体素分块求逆 + 介质对角",
    "block": "按槽位几何分块（全部面板）求逆",
    "diagonal": "对角求逆",
    "none": "不使用预条件",
}

# 稠密参考解允许的最大面板数
DENSE_ORACLE_LIMIT = 3000

# 核函数批量计算的分块大小（面板对数）
KERNEL_CHUNK = 4096

# 缓存配置
CACHE_ENV_VAR = "TOCAP_CACHE_DIR"
DEFAULT_CACHE_DIR = Path(__file__).parent.parent / "kernel_cache"
DEFAULT_INSTALL_DIMS = 256
CACHE_MAGIC = b"TOCAPTKR"
CACHE_FORMAT_VERSION = 1

# 结构文件
STRUCTURE_FORMAT = "tocap-structure"
STRUCTURE_VERSION = 1

# 输出精度
CAPACITANCE_DIGITS = 9

# 默认输出目录
DEFAULT_OUTPUT_PATH = Path.cwd() / "tocap_output"


def get_cache_dir(override: str = None) -> Path:
    """解析缓存目录：参数 > 环境变量 > 默认值"""
    if override:
        return Path(override)
    env_value = os.environ.get(CACHE_ENV_VAR)
    if env_value:
        return Path(env_value)
    return DEFAULT_CACHE_DIR


def get_axis_index(axis) -> int:
    """坐标轴名称或编号 -> 编号"""
    if isinstance(axis, str):
        if axis not in AXIS_INDEX:
            raise ValueError(f"未知坐标轴: {axis}")
        return AXIS_INDEX[axis]
    index = int(axis)
    if index not in (0, 1, 2):
        raise ValueError(f"未知坐标轴: {axis}")
    return index
