"""结果输出模块（电容矩阵、面板电荷、dB 电荷分布、运行报告）"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .config import AXES, CAPACITANCE_DIGITS
from .errors import ToCapError
from .solver import ExtractionResult

logger = logging.getLogger(__name__)

CAPACITANCE_FILE = "capacitance.csv"
CHARGES_FILE = "charges.csv"
TELEMETRY_JSON = "telemetry.json"
TELEMETRY_TEXT = "telemetry.txt"
ERROR_FILE = "error.json"


def _fmt(value: float, digits: int = CAPACITANCE_DIGITS) -> str:
    return f"{float(value):.{digits}g}"


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_capacitance_csv(path, result: ExtractionResult) -> str:
    """电容矩阵 CSV：首行首列为导体编号，单位 F，9 位有效数字"""
    path = _prepare(path)
    ids = list(result.conductor_ids)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["conductor"] + ids)
        for cid, row in zip(ids, result.capacitance):
            writer.writerow([cid] + [_fmt(v) for v in row])
    return str(path)


def write_charges_csv(path, result: ExtractionResult) -> str:
    """逐面板电荷表：中心、方向、符号、类型、各激励下的电荷系数"""
    path = _prepare(path)
    panels = result.panels
    centers = panels.centers
    conductor = panels.is_conductor
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["panel", "x", "y", "z", "direction", "sign", "kind", "conductor"]
                        + [f"charge_{cid}" for cid in result.conductor_ids])
        for i in range(len(panels)):
            k = int(panels.conductor[i])
            owner = panels.conductor_ids[k - 1] if conductor[i] else ""
            writer.writerow(
                [i] + [_fmt(c) for c in centers[i]]
                + [AXES[int(panels.axis[i])], int(panels.sign[i]),
                   "conductor" if conductor[i] else "dielectric", owner]
                + [_fmt(q) for q in result.charges[i]]
            )
    return str(path)


def normalized_db(charges: np.ndarray) -> np.ndarray:
    """20·log10(|ρ| / max|ρ|)，按 float32 取整，最大值恰为 0 dB"""
    magnitude = np.abs(np.asarray(charges, dtype=float))
    peak = magnitude.max() if magnitude.size else 0.0
    if peak == 0.0:
        return np.full(magnitude.shape, -np.inf, dtype=np.float32)
    with np.errstate(divide="ignore"):
        return (20.0 * np.log10(magnitude / peak)).astype(np.float32)


def write_db_field_csv(path, result: ExtractionResult, conductor_id=None) -> str:
    """某个激励下的归一化 dB 电荷分布（默认第一个导体）"""
    path = _prepare(path)
    ids = list(result.conductor_ids)
    column = 0 if conductor_id is None else ids.index(conductor_id)
    panels = result.panels
    db = normalized_db(result.charges[:, column])
    centers = panels.centers.astype(np.float32)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "z", "direction", "kind", "db"])
        for i in range(len(panels)):
            writer.writerow(
                [repr(float(c)) for c in centers[i]]
                + [AXES[int(panels.axis[i])], "conductor" if i < panels.n_conductor else "dielectric",
                   repr(float(db[i]))]
            )
    return str(path)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"无法序列化: {type(value).__name__}")


def format_telemetry(telemetry: Dict[str, Any]) -> str:
    """运行报告的文本表格（按阶段列出耗时与内存）"""
    lines: List[str] = [f"ToCap {telemetry.get('version', '')} 运行报告", ""]
    structure = telemetry.get("structure", {})
    if structure:
        lines.append(f"计算域: {structure.get('dims')}  体素: {structure.get('voxel_size')}")
        lines.append(f"面板: {structure.get('n')} (导体 {structure.get('n_conductor')}, "
                     f"介质 {structure.get('n_dielectric')})")
        lines.append(f"核张量来源: {telemetry.get('kernel_source')}")
        lines.append("")

    lines.append(f"{'阶段':<28}{'耗时 (s)':>14}")
    lines.append("-" * 42)
    for name, seconds in telemetry.get("stages", {}).items():
        lines.append(f"{name:<28}{seconds:>14.4f}")
    lines.append("")

    memory = telemetry.get("memory", {})
    if memory:
        lines.append(f"{'内存':<28}{'MB':>14}")
        lines.append("-" * 42)
        for key in ("toeplitz_bytes", "circulant_raw_bytes", "circulant_stored_bytes"):
            if key in memory:
                lines.append(f"{key:<28}{memory[key] / 1e6:>14.3f}")
        precond = memory.get("preconditioner", {})
        if precond:
            lines.append(f"{'preconditioner':<28}{precond['bytes'] / 1e6:>14.3f}")
            lines.append(f"{'preconditioner (no dedup)':<28}{precond['bytes_without_dedup'] / 1e6:>14.3f}")
            if "bytes_conventional" in precond:
                lines.append(f"{'preconditioner (conventional)':<28}{precond['bytes_conventional'] / 1e6:>14.3f}")
        lines.append(f"CR = {memory.get('compression_ratio', float('nan')):.2f}")
        if memory.get("computational_overhead") is not None:
            lines.append(f"CO = {memory['computational_overhead']:.3f}")
        lines.append("")

    rows = telemetry.get("solver", [])
    if rows:
        lines.append(f"{'导体':<10}{'迭代':>8}{'RRE':>14}{'真实 RRE':>14}{'耗时 (s)':>12}  收敛")
        lines.append("-" * 64)
        for row in rows:
            lines.append(
                f"{str(row['conductor']):<10}{row['iterations']:>8}{row['rre']:>14.3e}"
                f"{row['true_rre']:>14.3e}{row['seconds']:>12.3f}  {'是' if row['converged'] else '否'}"
            )
    return "\n".join(lines) + "\n"


def write_telemetry(output_dir, telemetry: Dict[str, Any]) -> Dict[str, str]:
    """写出 JSON 与文本两种运行报告"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    json_path = output_dir / TELEMETRY_JSON
    text_path = output_dir / TELEMETRY_TEXT
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(telemetry, f, ensure_ascii=False, indent=2, default=_json_default)
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(format_telemetry(telemetry))
    return {"json": str(json_path), "text": str(text_path)}


def write_error_report(output_dir, error: Exception, exit_code: int = None) -> str:
    """结构化错误报告 error.json"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(error, ToCapError):
        report = error.to_report()
    else:
        report = {"type": type(error).__name__, "message": str(error), "exit_code": exit_code}
    path = output_dir / ERROR_FILE
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False, indent=2)
    return str(path)


def write_results(output_dir, result: ExtractionResult) -> Dict[str, str]:
    """写出全部结果文件"""
    output_dir = Path(output_dir)
    written = {
        "capacitance": write_capacitance_csv(output_dir / CAPACITANCE_FILE, result),
        "charges": write_charges_csv(output_dir / CHARGES_FILE, result),
    }
    for cid in result.conductor_ids:
        written[f"db_{cid}"] = write_db_field_csv(output_dir / f"charge_db_{cid}.csv", result, cid)
    written.update(write_telemetry(output_dir, result.telemetry))
    logger.info("结果已写入 %s", output_dir)
    return written
