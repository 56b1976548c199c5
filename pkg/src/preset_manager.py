"""结构预设管理模块"""

import json
import os
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from .config import STRUCTURE_FORMAT, STRUCTURE_VERSION
from .errors import StructureError


def _document(name: str, voxel_size: float, conductors: List[Dict], dielectrics: List[Dict],
              background_eps_r: float = 1.0) -> Dict[str, Any]:
    return {
        "format": STRUCTURE_FORMAT,
        "version": STRUCTURE_VERSION,
        "name": name,
        "voxel_size": voxel_size,
        "background_eps_r": background_eps_r,
        "conductors": conductors,
        "dielectrics": dielectrics,
    }


def _box(lo, hi) -> Dict[str, Any]:
    return {"shape": "box", "lo": [float(v) for v in lo], "hi": [float(v) for v in hi]}


def coated_sphere(voxel_size: float = 0.05, r_c: float = 0.25, r_d: float = 0.5,
                  eps_r: float = 2.0) -> Dict[str, Any]:
    """介质球壳包覆的导体球，球心位于原点"""
    center = [0.0, 0.0, 0.0]
    return _document(
        "coated-sphere", voxel_size,
        [{"id": 1, "primitive": {"shape": "sphere", "center": center, "radius": r_c}}],
        [{"eps_r": eps_r, "primitive": {"shape": "shell", "center": center,
                                        "inner_radius": r_c, "outer_radius": r_d}}],
    )


def coated_cube(edge: int = 10, coating: int = 2, eps_r: float = 2.0,
                voxel_size: float = 1e-6) -> Dict[str, Any]:
    """介质包覆的导体立方体（尺寸以体素计）"""
    v = voxel_size
    outer = edge + 2 * coating
    return _document(
        "coated-cube", voxel_size,
        [{"id": 1, "primitive": _box([coating * v] * 3, [(coating + edge) * v] * 3)}],
        [{"eps_r": eps_r, "primitive": _box([0.0] * 3, [outer * v] * 3)}],
    )


def coated_plate(width: int = 20, length: int = 20, thickness: int = 1, coating: int = 1,
                 eps_r: float = 2.0, voxel_size: float = 1e-6) -> Dict[str, Any]:
    """介质包覆的导体薄板（准二维结构）"""
    v, c = voxel_size, coating
    return _document(
        "coated-plate", voxel_size,
        [{"id": 1, "primitive": _box([c * v] * 3, [(c + length) * v, (c + width) * v, (c + thickness) * v])}],
        [{"eps_r": eps_r, "primitive": _box(
            [0.0] * 3, [(length + 2 * c) * v, (width + 2 * c) * v, (thickness + 2 * c) * v])}],
    )


def parallel_interconnects(layers: int = 2, columns: int = 3, width: int = 4, height: int = 1,
                           length: int = 20, pitch: int = 5, margin: int = 1, eps_r: float = 7.0,
                           voxel_size: float = 2e-5) -> Dict[str, Any]:
    """介质基板中的平行互连阵列（尺寸以体素计），导体自左下角按列编号"""
    v = voxel_size
    layer_pitch = 2 * height
    conductors = []
    cid = 1
    for layer in range(layers):
        for col in range(columns):
            y0 = margin + col * pitch
            z0 = margin + layer * layer_pitch
            conductors.append({"id": cid, "primitive": _box(
                [margin * v, y0 * v, z0 * v], [(margin + length) * v, (y0 + width) * v, (z0 + height) * v])})
            cid += 1
    size_y = 2 * margin + (columns - 1) * pitch + width
    size_z = 2 * margin + (layers - 1) * layer_pitch + height
    substrate = _box([0.0] * 3, [(length + 2 * margin) * v, size_y * v, size_z * v])
    return _document("parallel-interconnects", voxel_size, conductors,
                     [{"eps_r": eps_r, "primitive": substrate}])


def crossing_buses(buses: int = 2, bus_layers: int = 3, width: int = 2, height: int = 4,
                   pitch: int = 4, thick_layer: int = 6, thin_layer: int = 1, coating: int = 1,
                   eps_thick: float = 2.6, eps_thin: float = 5.0, eps_coating: float = 3.7,
                   voxel_size: float = 3.5e-8) -> Dict[str, Any]:
    """多层介质中的交叉总线（尺寸以体素计）

    奇数层为厚介质并容纳总线，相邻总线层方向交替；偶数层为薄介质。
    中间总线层的导体带有一层介质包覆。
    """
    v = voxel_size
    margin = width
    span = 2 * margin + (buses - 1) * pitch + width
    dielectrics = []
    conductors = []
    z = 0
    cid = 1
    middle = bus_layers // 2
    for layer in range(bus_layers):
        dielectrics.append({"eps_r": eps_thick, "primitive": _box([0, 0, z * v], [span * v, span * v, (z + thick_layer) * v])})
        z0 = z + (thick_layer - height) // 2
        for b in range(buses):
            offset = margin + b * pitch
            if layer % 2 == 0:
                lo, hi = [0, offset, z0], [span, offset + width, z0 + height]
            else:
                lo, hi = [offset, 0, z0], [offset + width, span, z0 + height]
            if layer == middle and coating > 0:
                along = layer % 2
                coat_lo = [a if i == along else a - coating for i, a in enumerate(lo)]
                coat_hi = [a if i == along else a + coating for i, a in enumerate(hi)]
                dielectrics.append({"eps_r": eps_coating, "primitive": _box(
                    [a * v for a in coat_lo], [a * v for a in coat_hi])})
            conductors.append({"id": cid, "primitive": _box([a * v for a in lo], [a * v for a in hi])})
            cid += 1
        z += thick_layer
        dielectrics.append({"eps_r": eps_thin, "primitive": _box([0, 0, z * v], [span * v, span * v, (z + thin_layer) * v])})
        z += thin_layer
    return _document("crossing-buses", voxel_size, conductors, dielectrics)


def meander_lines(n: int = 3, width: int = 5, height: int = 5, spacing: int = 1, length: int = 30,
                  voxel_size: float = 1e-4) -> Dict[str, Any]:
    """n 层、每层 n 条的平行导线（真空中，尺寸以体素计）"""
    v = voxel_size
    conductors = []
    cid = 1
    for layer in range(n):
        for line in range(n):
            y0 = line * (width + spacing)
            z0 = layer * (height + spacing)
            conductors.append({"id": cid, "primitive": _box(
                [0, y0 * v, z0 * v], [length * v, (y0 + width) * v, (z0 + height) * v])})
            cid += 1
    return _document("meander-lines", voxel_size, conductors, [])


BUILTIN_PRESETS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "coated-sphere": coated_sphere,
    "coated-cube": coated_cube,
    "coated-plate": coated_plate,
    "parallel-interconnects": parallel_interconnects,
    "crossing-buses": crossing_buses,
    "meander-lines": meander_lines,
}


class PresetManager:
    """结构预设管理器：内置参数化预设 + 用户保存的 JSON 结构文档"""

    def __init__(self, preset_dir: str = None):
        if preset_dir is None:
            # 默认预设目录
            self.preset_dir = Path(__file__).parent.parent / "presets"
        else:
            self.preset_dir = Path(preset_dir)

    @staticmethod
    def _safe_name(name: str) -> str:
        safe_name = "".join(c for c in name if c.isalnum() or c in (' ', '-', '_')).strip()
        return safe_name.replace(' ', '_')

    def _path(self, name: str) -> Path:
        safe_name = self._safe_name(name)
        if not safe_name:
            raise StructureError(f"预设名称非法: {name!r}")
        return self.preset_dir / f"{safe_name}.json"

    def save_preset(self, name: str, structure: Dict[str, Any], description: str = "") -> str:
        """保存预设

        Args:
            name: 预设名称
            structure: 结构文档
            description: 预设描述

        Returns:
            预设文件路径
        """
        preset_data = {
            "name": name,
            "description": description,
            "structure": structure,
        }
        file_path = self._path(name)
        self.preset_dir.mkdir(parents=True, exist_ok=True)
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(preset_data, f, ensure_ascii=False, indent=2)
        return str(file_path)

    def load_preset(self, name: str, **params) -> Optional[Dict[str, Any]]:
        """加载预设：先查用户预设，再查内置预设

        Args:
            name: 预设名称
            params: 内置预设的参数覆盖

        Returns:
            结构文档，不存在时返回 None
        """
        file_path = self._path(name)
        if file_path.exists():
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f).get("structure", {})
        if name in BUILTIN_PRESETS:
            return self.get_builtin(name, **params)
        return None

    def delete_preset(self, name: str) -> bool:
        """删除用户预设，内置预设不可删除"""
        file_path = self._path(name)
        if file_path.exists():
            os.remove(file_path)
            return True
        return False

    def rename_preset(self, old_name: str, new_name: str) -> bool:
        """重命名用户预设"""
        old_path = self._path(old_name)
        if not old_path.exists():
            return False
        with open(old_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        self.save_preset(new_name, data.get("structure", {}), data.get("description", ""))
        self.delete_preset(old_name)
        return True

    def list_presets(self) -> List[Dict[str, str]]:
        """列出全部预设（内置在前）

        Returns:
            预设列表，每个元素包含 name、description、source
        """
        presets = [
            {"name": name, "description": (func.__doc__ or "").strip().splitlines()[0], "source": "builtin"}
            for name, func in BUILTIN_PRESETS.items()
        ]
        for file_path in sorted(self.preset_dir.glob("*.json")):
            try:
                with open(file_path, 'r', encoding='utf-8') as f:
                    data = json.load(f)
            except (OSError, json.JSONDecodeError):
                continue
            presets.append({
                "name": data.get("name", file_path.stem),
                "description": data.get("description", ""),
                "source": str(file_path),
            })
        return presets

    def get_builtin(self, name: str, **params) -> Dict[str, Any]:
        """生成内置预设的结构文档"""
        if name not in BUILTIN_PRESETS:
            raise StructureError(f"未知预设: {name}，可选 {list(BUILTIN_PRESETS)}")
        try:
            return BUILTIN_PRESETS[name](**params)
        except TypeError as exc:
            raise StructureError(f"预设 {name} 参数错误: {exc}") from None
