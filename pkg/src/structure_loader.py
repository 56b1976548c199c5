"""结构文件读取与校验模块"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from .config import STRUCTURE_FORMAT, STRUCTURE_VERSION
from .errors import StructureError
from .geometry import (
    ConductorRegion,
    DielectricRegion,
    PRIMITIVE_SHAPES,
    StructureDescription,
    primitive_voxels,
)

logger = logging.getLogger(__name__)


def _region_voxels(entry: Dict[str, Any], voxel_size: float, label: str) -> np.ndarray:
    """区域的体素索引：voxels 与 primitive 二选一"""
    has_voxels = "voxels" in entry
    has_primitive = "primitive" in entry
    if has_voxels == has_primitive:
        raise StructureError(f"{label} 必须且只能给出 voxels 或 primitive 之一")

    if has_voxels:
        try:
            voxels = np.asarray(entry["voxels"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise StructureError(f"{label} 的 voxels 无法解析: {exc}") from None
        if voxels.size == 0:
            raise StructureError(f"{label} 没有体素")
        if voxels.ndim != 2 or voxels.shape[1] != 3 or not np.all(voxels == np.round(voxels)):
            raise StructureError(f"{label} 的 voxels 必须是整数三元组列表")
        return voxels.astype(np.int64)

    primitive = entry["primitive"]
    if not isinstance(primitive, dict) or primitive.get("shape") not in PRIMITIVE_SHAPES:
        raise StructureError(f"{label} 的 primitive.shape 必须是 {PRIMITIVE_SHAPES} 之一")
    params = {k: v for k, v in primitive.items() if k != "shape"}
    voxels = primitive_voxels(primitive["shape"], params, voxel_size)
    if len(voxels) == 0:
        raise StructureError(f"{label} 的几何体不包含任何体素中心")
    return voxels


def parse_structure(data: Dict[str, Any]) -> StructureDescription:
    """把结构文档（字典）转换为结构描述

    Args:
        data: 结构文档，format/version 必须匹配

    Returns:
        平移到非负索引后的结构描述
    """
    if not isinstance(data, dict):
        raise StructureError("结构文档必须是 JSON 对象")
    if data.get("format", STRUCTURE_FORMAT) != STRUCTURE_FORMAT:
        raise StructureError(f"不支持的结构格式: {data.get('format')}")
    version = data.get("version", STRUCTURE_VERSION)
    if version != STRUCTURE_VERSION:
        raise StructureError(f"不支持的结构文件版本: {version}（当前支持 {STRUCTURE_VERSION}）")

    try:
        voxel_size = float(data["voxel_size"])
    except KeyError:
        raise StructureError("结构文档缺少 voxel_size") from None
    except (TypeError, ValueError):
        raise StructureError(f"voxel_size 非法: {data['voxel_size']!r}") from None
    if not voxel_size > 0:
        raise StructureError(f"体素尺寸必须为正: {voxel_size}")

    background = float(data.get("background_eps_r", 1.0))
    if not background > 0:
        raise StructureError(f"背景介电常数必须为正: {background}")

    conductors: List[ConductorRegion] = []
    for i, entry in enumerate(data.get("conductors", [])):
        if "id" not in entry:
            raise StructureError(f"第 {i + 1} 个导体缺少 id")
        cid = entry["id"]
        if isinstance(cid, bool) or not isinstance(cid, int):
            raise StructureError(f"导体 id 必须是整数: {cid!r}")
        conductors.append(ConductorRegion(cid, _region_voxels(entry, voxel_size, f"导体 {cid}")))

    dielectrics: List[DielectricRegion] = []
    for i, entry in enumerate(data.get("dielectrics", [])):
        try:
            eps_r = float(entry["eps_r"])
        except KeyError:
            raise StructureError(f"第 {i + 1} 个介质区域缺少 eps_r") from None
        if not eps_r > 0:
            raise StructureError(f"介质介电常数必须为正: {eps_r}")
        dielectrics.append(DielectricRegion(eps_r, _region_voxels(entry, voxel_size, f"介质 {i + 1}")))

    if not conductors:
        raise StructureError("结构中没有导体")

    description = StructureDescription(
        voxel_size=voxel_size,
        conductors=conductors,
        dielectrics=dielectrics,
        background_eps_r=background,
        name=str(data.get("name", "")),
    )
    return description.normalized()


def load_structure(source: Union[str, Path, Dict[str, Any]]) -> StructureDescription:
    """读取结构文件或结构文档

    Args:
        source: JSON 文件路径或已解析的字典

    Returns:
        结构描述
    """
    if isinstance(source, dict):
        return parse_structure(source)

    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"结构文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise StructureError(f"结构文件不是合法的 JSON: {path} ({exc})") from None
    description = parse_structure(data)
    if not description.name:
        description.name = path.stem
    logger.info("已读取结构 %s: %d 个导体，%d 个介质区域",
                description.name, len(description.conductors), len(description.dielectrics))
    return description


def structure_to_dict(description: StructureDescription) -> Dict[str, Any]:
    """结构描述导出为（体素形式的）结构文档"""
    return {
        "format": STRUCTURE_FORMAT,
        "version": STRUCTURE_VERSION,
        "name": description.name,
        "voxel_size": description.voxel_size,
        "background_eps_r": description.background_eps_r,
        "conductors": [
            {"id": int(c.id), "voxels": np.asarray(c.voxels).reshape(-1, 3).tolist()}
            for c in description.conductors
        ],
        "dielectrics": [
            {"eps_r": float(d.eps_r), "voxels": np.asarray(d.voxels).reshape(-1, 3).tolist()}
            for d in description.dielectrics
        ],
    }
