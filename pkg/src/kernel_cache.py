"""核张量缓存模块

单位体素 Toeplitz 张量在安装阶段生成、Tucker 压缩后写入磁盘，每个张量一个文件。
文件格式（小端）：
    头部  magic(8s) version(H) which(B) alpha(B) beta(B) dtype(B)
          生成尺寸(3I) 单位体素标记(d) 容差(d) 秩(3I) 张量尺寸(3I) + crc32(I)
    四段  核心张量、三个因子矩阵；每段 长度(Q) + float64 数据 + crc32(I)
"""

import json
import logging
import os
import struct
import time
import zlib
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .config import CACHE_FORMAT_VERSION, CACHE_MAGIC, DEFAULT_INSTALL_DIMS
from .errors import CacheError
from .toeplitz import (
    EFIELD_PAIRS,
    POTENTIAL_PAIRS,
    ToeplitzKernelSet,
    generate_toeplitz,
    pair_name,
    scale_toeplitz,
    toeplitz_dims,
)
from .tucker import TuckerTensor, compress, decompress
from .version import get_version_tuple

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<8sHBBBB3Idd3I3I")
_CRC = struct.Struct("<I")
_LENGTH = struct.Struct("<Q")
_WHICH_CODE = {"A": 0, "B": 1}
_WHICH_NAME = {0: "A", 1: "B"}

FILE_SUFFIX = ".tkr"
MANIFEST_NAME = "manifest.json"


def cache_jobs():
    """缓存包含的全部张量 (which, alpha, beta)"""
    return [("A", a, b) for a, b in POTENTIAL_PAIRS] + [("B", a, b) for a, b in EFIELD_PAIRS]


def cache_file(cache_dir: Path, which: str, alpha: int, beta: int) -> Path:
    return Path(cache_dir) / f"{pair_name(which, alpha, beta)}{FILE_SUFFIX}"


def _encode_array(array: np.ndarray) -> bytes:
    if np.iscomplexobj(array):
        array = np.ascontiguousarray(array, dtype=np.complex128).view(np.float64)
    return np.ascontiguousarray(array, dtype="<f8").tobytes()


def _decode_array(payload: bytes, shape, complex_: bool) -> np.ndarray:
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if complex_:
        data = data.view(np.complex128)
    return data.reshape(shape)


def write_tucker_file(path: Path, tucker: TuckerTensor, which: str, alpha: int, beta: int,
                      generation_dims) -> int:
    """写入一个压缩张量文件（先写临时文件再替换）

    Returns:
        写入的字节数
    """
    path = Path(path)
    complex_ = np.iscomplexobj(tucker.core)
    header = _HEADER.pack(
        CACHE_MAGIC, CACHE_FORMAT_VERSION, _WHICH_CODE[which], alpha, beta, int(complex_),
        *[int(n) for n in generation_dims], 1.0, float(tucker.tol),
        *tucker.ranks, *tucker.original_dims,
    )
    chunks = [header, _CRC.pack(zlib.crc32(header))]
    for array in [tucker.core] + list(tucker.factors):
        payload = _encode_array(array)
        chunks += [_LENGTH.pack(len(payload)), payload, _CRC.pack(zlib.crc32(payload))]

    tmp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp_path, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
        os.replace(tmp_path, path)
    except OSError as exc:
        raise CacheError(f"写入缓存文件失败: {path} ({exc})") from exc
    return sum(len(c) for c in chunks)


def read_tucker_header(path: Path) -> Dict:
    """只读取并校验头部"""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = f.read(_HEADER.size + _CRC.size)
    except OSError as exc:
        raise CacheError(f"无法读取缓存文件: {path} ({exc})") from exc
    return _parse_header(raw, path)


def _parse_header(raw: bytes, path: Path) -> Dict:
    if len(raw) < _HEADER.size + _CRC.size:
        raise CacheError(f"缓存文件头部不完整: {path}")
    header = raw[:_HEADER.size]
    (crc,) = _CRC.unpack_from(raw, _HEADER.size)
    if zlib.crc32(header) != crc:
        raise CacheError(f"缓存文件头部校验失败: {path}")
    fields = _HEADER.unpack(header)
    magic, version, which, alpha, beta, complex_ = fields[:6]
    if magic != CACHE_MAGIC:
        raise CacheError(f"不是有效的缓存文件: {path}")
    if version != CACHE_FORMAT_VERSION:
        raise CacheError(f"缓存格式版本 {version} 与当前版本 {CACHE_FORMAT_VERSION} 不一致: {path}")
    if which not in _WHICH_NAME:
        raise CacheError(f"缓存文件张量类型非法: {path}")
    return {
        "which": _WHICH_NAME[which],
        "alpha": alpha,
        "beta": beta,
        "complex": bool(complex_),
        "generation_dims": tuple(fields[6:9]),
        "unit_voxel": fields[9],
        "tol": fields[10],
        "ranks": tuple(fields[11:14]),
        "tensor_dims": tuple(fields[14:17]),
    }


def read_tucker_file(path: Path) -> Tuple[Dict, TuckerTensor]:
    """读取并校验一个压缩张量文件"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CacheError(f"无法读取缓存文件: {path} ({exc})") from exc
    info = _parse_header(raw, path)

    ranks, dims = info["ranks"], info["tensor_dims"]
    shapes = [ranks] + [(d, r) for d, r in zip(dims, ranks)]
    arrays = []
    offset = _HEADER.size + _CRC.size
    for shape in shapes:
        if offset + _LENGTH.size > len(raw):
            raise CacheError(f"缓存文件截断: {path}")
        (length,) = _LENGTH.unpack_from(raw, offset)
        offset += _LENGTH.size
        payload = raw[offset:offset + length]
        offset += length
        if len(payload) != length or offset + _CRC.size > len(raw):
            raise CacheError(f"缓存文件截断: {path}")
        (crc,) = _CRC.unpack_from(raw, offset)
        offset += _CRC.size
        if zlib.crc32(payload) != crc:
            raise CacheError(f"缓存数据校验失败: {path}")
        expected = int(np.prod(shape)) * (16 if info["complex"] else 8)
        if length != expected:
            raise CacheError(f"缓存数据长度与头部不符: {path}")
        arrays.append(_decode_array(payload, shape, info["complex"]))

    tucker = TuckerTensor(arrays[0], arrays[1:], tuple(dims), info["tol"])
    return info, tucker


def _is_valid(path: Path, dims, tol: float, which: str, alpha: int, beta: int) -> bool:
    if not path.exists():
        return False
    try:
        info, _ = read_tucker_file(path)
    except CacheError as exc:
        logger.warning("缓存文件无效，将重新生成: %s", exc)
        return False
    return (info["generation_dims"] == tuple(dims) and info["tol"] <= tol
            and (info["which"], info["alpha"], info["beta"]) == (which, alpha, beta))


def install_cache(cache_dir, dims_class: int = DEFAULT_INSTALL_DIMS, tol: float = 1e-8,
                  near_threshold: float = None, order: int = None, force: bool = False,
                  progress_callback: Callable = None) -> Dict:
    """生成单位体素 Toeplitz 张量缓存（幂等）

    Args:
        cache_dir: 缓存目录
        dims_class: 立方计算域的边长（体素数）
        tol: Tucker 压缩容差
        force: 忽略已有缓存强制重新生成
        progress_callback: 进度回调 (percent, message)

    Returns:
        安装摘要
    """
    cache_dir = Path(cache_dir)
    try:
        cache_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CacheError(f"无法创建缓存目录: {cache_dir} ({exc})") from exc

    dims = (int(dims_class),) * 3
    summary = {"cache_dir": str(cache_dir), "dims": list(dims), "tol": tol,
               "generated": [], "skipped": [], "raw_bytes": 0, "compressed_bytes": 0}
    start = time.perf_counter()
    jobs = cache_jobs()

    for done, (which, alpha, beta) in enumerate(jobs, start=1):
        name = pair_name(which, alpha, beta)
        path = cache_file(cache_dir, which, alpha, beta)
        raw_bytes = int(np.prod(toeplitz_dims(alpha, beta, dims))) * 8
        summary["raw_bytes"] += raw_bytes

        if not force and _is_valid(path, dims, tol, which, alpha, beta):
            logger.info("缓存已存在，跳过: %s", name)
            summary["skipped"].append(name)
        else:
            tensor = generate_toeplitz(alpha, beta, dims, 1.0, which, near_threshold, order)
            tucker = compress(tensor, tol)
            write_tucker_file(path, tucker, which, alpha, beta, dims)
            # 回读校验
            read_tucker_file(path)
            logger.info("已生成 %s: ranks=%s CR=%.1f", name, tucker.ranks, tucker.compression_ratio)
            summary["generated"].append(name)

        summary["compressed_bytes"] += path.stat().st_size
        if progress_callback:
            progress_callback(int(100 * done / len(jobs)), f"缓存 {name}")

    summary["seconds"] = time.perf_counter() - start
    summary["compression_ratio"] = summary["raw_bytes"] / max(summary["compressed_bytes"], 1)

    manifest = {key: summary[key] for key in ("dims", "tol", "raw_bytes", "compressed_bytes")}
    manifest["format_version"] = CACHE_FORMAT_VERSION
    manifest["tocap_version"] = list(get_version_tuple())
    manifest["files"] = sorted(p.name for p in cache_dir.glob(f"*{FILE_SUFFIX}"))
    with open(cache_dir / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
    return summary


def verify_cache(cache_dir) -> Dict[str, str]:
    """逐个校验缓存文件

    Returns:
        {张量名: "ok" 或错误信息}
    """
    cache_dir = Path(cache_dir)
    report = {}
    for which, alpha, beta in cache_jobs():
        name = pair_name(which, alpha, beta)
        path = cache_file(cache_dir, which, alpha, beta)
        if not path.exists():
            report[name] = "missing"
            continue
        try:
            read_tucker_file(path)
            report[name] = "ok"
        except CacheError as exc:
            report[name] = str(exc)
    return report


def _decompress_leading(tucker: TuckerTensor, shape) -> np.ndarray:
    """只恢复前导子张量：截取因子矩阵的前若干行"""
    factors = [f[:n] for f, n in zip(tucker.factors, shape)]
    return decompress(TuckerTensor(tucker.core, factors, tuple(shape), tucker.tol))


def load_cached_toeplitz(cache_dir, target_dims, voxel_size: float
                         ) -> Tuple[Optional[ToeplitzKernelSet], Dict[str, float]]:
    """读取缓存，截取到目标尺寸并按体素尺寸缩放

    Args:
        cache_dir: 缓存目录
        target_dims: 计算域体素数
        voxel_size: 目标体素尺寸

    Returns:
        (ToeplitzKernelSet 或 None, 计时)；缓存缺失或尺寸不足时返回 None
    """
    cache_dir = Path(cache_dir)
    timings = {"read_seconds": 0.0, "restore_seconds": 0.0}
    target_dims = tuple(int(n) for n in target_dims)

    paths = {job: cache_file(cache_dir, *job) for job in cache_jobs()}
    if not all(p.exists() for p in paths.values()):
        logger.warning("缓存目录不完整: %s", cache_dir)
        return None, timings
    for path in paths.values():
        info = read_tucker_header(path)
        if any(t > g for t, g in zip(target_dims, info["generation_dims"])):
            logger.warning("缓存尺寸 %s 小于计算域 %s", info["generation_dims"], target_dims)
            return None, timings

    unit = ToeplitzKernelSet(dims=target_dims, voxel_size=1.0)
    for (which, alpha, beta), path in paths.items():
        start = time.perf_counter()
        _, tucker = read_tucker_file(path)
        mid = time.perf_counter()
        tensor = _decompress_leading(tucker, toeplitz_dims(alpha, beta, target_dims))
        timings["read_seconds"] += mid - start
        timings["restore_seconds"] += time.perf_counter() - mid
        target = unit.potential if which == "A" else unit.efield
        target[(alpha, beta)] = np.ascontiguousarray(tensor.real)
    return scale_toeplitz(unit, voxel_size), timings
