"""命令行入口模块"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .config import (
    DEFAULT_INSTALL_DIMS,
    DEFAULT_OUTPUT_PATH,
    DEFAULT_SOLVER,
    HIGH_ACCURACY_RRE,
    PRECONDITIONER_MODES,
    get_cache_dir,
)
from .errors import (
    EXIT_INPUT_ERROR,
    EXIT_OK,
    EXIT_SOLVER_FAILURE,
    EXIT_UNEXPECTED,
    EXIT_VERIFY_FAILURE,
    SolverError,
    ToCapError,
)
from .extractor import CapacitanceExtractor
from .kernel_cache import install_cache
from .preset_manager import PresetManager
from .report import write_error_report, write_results
from .solver import SolverConfig
from .structure_loader import load_structure
from .verification import LEVELS, SUITES, run_verification
from .version import get_version_string

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """一次命令行运行的配置"""
    stage: str
    structure_path: Optional[Path] = None
    preset: Optional[str] = None
    preset_params: Dict[str, Any] = field(default_factory=dict)
    cache_dir: Optional[Path] = None
    output_dir: Path = DEFAULT_OUTPUT_PATH
    use_cache: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    verbosity: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        overrides = {
            "restart": getattr(args, "restart", None),
            "rre": HIGH_ACCURACY_RRE if getattr(args, "high_accuracy", False) else getattr(args, "rre", None),
            "max_iterations": getattr(args, "max_iterations", None),
            "preconditioner": getattr(args, "preconditioner", None),
            "box_dims": getattr(args, "box_dims", None),
            "tucker_tol": getattr(args, "tucker_tol", None),
            "compress_circulants": False if getattr(args, "no_compress", False) else None,
            "near_threshold": getattr(args, "near_threshold", None),
            "quadrature_order": getattr(args, "quadrature_order", None),
            "fft_workers": getattr(args, "fft_workers", None),
            "workers": getattr(args, "workers", None),
        }
        structure = getattr(args, "structure", None)
        return cls(
            stage=args.command,
            structure_path=Path(structure) if structure else None,
            preset=getattr(args, "preset", None),
            preset_params=parse_params(getattr(args, "param", None) or []),
            cache_dir=get_cache_dir(getattr(args, "cache_dir", None)),
            output_dir=Path(getattr(args, "output", None) or DEFAULT_OUTPUT_PATH),
            use_cache=not getattr(args, "no_cache", False),
            solver=SolverConfig.from_dict(overrides),
            verbosity=args.verbose,
        )


def parse_params(items: List[str]) -> Dict[str, Any]:
    """解析 key=value 形式的预设参数，value 按 JSON 解析，失败时保留字符串"""
    params = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"预设参数格式应为 key=value: {item}")
        key, value = item.split("=", 1)
        try:
            params[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            params[key.strip()] = value
    return params


def _progress(percent: int, message: str) -> None:
    logger.info("[%3d%%] %s", percent, message)


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("求解器配置")
    group.add_argument("--restart", type=int, help=f"GMRES 重启步数 (默认 {DEFAULT_SOLVER['restart']})")
    group.add_argument("--rre", type=float, help=f"目标相对残差 (默认 {DEFAULT_SOLVER['rre']})")
    group.add_argument("--high-accuracy", action="store_true", help=f"高精度模式，RRE = {HIGH_ACCURACY_RRE}")
    group.add_argument("--max-iterations", type=int, help="最大迭代次数")
    group.add_argument("--preconditioner", choices=list(PRECONDITIONER_MODES), help="预条件模式")
    group.add_argument("--box-dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"), help="预条件盒尺寸（体素）")
    group.add_argument("--tucker-tol", type=float, help="循环张量 Tucker 压缩容差")
    group.add_argument("--no-compress", action="store_true", help="不压缩循环张量")
    group.add_argument("--near-threshold", type=float, help="近场阈值（面板边长倍数）")
    group.add_argument("--quadrature-order", type=int, help="远场 Gauss 积分阶数")
    group.add_argument("--fft-workers", type=int, help="FFT 线程数")
    group.add_argument("--workers", type=int, help="张量生成与预条件构建线程数")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tocap", description="体素结构电容提取")
    parser.add_argument("--version", action="version", version=get_version_string())
    parser.add_argument("-v", "--verbose", action="count", default=0, help="输出更多日志（-vv 为调试）")
    sub = parser.add_subparsers(dest="command", required=True)

    install = sub.add_parser("install-cache", help="生成单位体素核张量缓存")
    install.add_argument("--cache-dir", help="缓存目录（默认取环境变量 TOCAP_CACHE_DIR）")
    install.add_argument("--dims", type=int, default=DEFAULT_INSTALL_DIMS, help="立方计算域边长（体素）")
    install.add_argument("--tol", type=float, default=DEFAULT_SOLVER["tucker_tol"], help="Tucker 压缩容差")
    install.add_argument("--force", action="store_true", help="忽略已有缓存重新生成")
    install.add_argument("--near-threshold", type=float, help="近场阈值（面板边长倍数）")
    install.add_argument("--quadrature-order", type=int, help="远场 Gauss 积分阶数")

    extract = sub.add_parser("extract", help="提取电容矩阵")
    source = extract.add_mutually_exclusive_group(required=True)
    source.add_argument("structure", nargs="?", help="结构文件 (JSON)")
    source.add_argument("--preset", help="使用内置或已保存的预设")
    extract.add_argument("--param", action="append", help="预设参数 key=value，可重复")
    extract.add_argument("-o", "--output", help="输出目录")
    extract.add_argument("--cache-dir", help="缓存目录")
    extract.add_argument("--no-cache", action="store_true", help="不读取缓存，直接生成核张量")
    _add_solver_flags(extract)

    verify = sub.add_parser("verify", help="运行性质校验")
    verify.add_argument("--level", choices=LEVELS, default="quick")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--suite", action="append", choices=list(SUITES), help="只运行指定套件，可重复")
    verify.add_argument("--cache-dir", help="一并校验已安装的缓存")
    verify.add_argument("-o", "--output", help="校验报告 JSON 路径")

    presets = sub.add_parser("presets", help="列出或导出结构预设")
    presets.add_argument("--export", metavar="NAME", help="导出指定预设的结构文档")
    presets.add_argument("--param", action="append", help="预设参数 key=value，可重复")
    presets.add_argument("-o", "--output", help="导出路径（默认输出到终端）")
    return parser


def cmd_install_cache(args: argparse.Namespace) -> int:
    cache_dir = get_cache_dir(args.cache_dir)
    summary = install_cache(
        cache_dir, dims_class=args.dims, tol=args.tol,
        near_threshold=args.near_threshold, order=args.quadrature_order,
        force=args.force, progress_callback=_progress,
    )
    print(f"缓存目录: {summary['cache_dir']}")
    print(f"生成 {len(summary['generated'])} 个，跳过 {len(summary['skipped'])} 个")
    print(f"原始 {summary['raw_bytes'] / 1e6:.2f} MB -> 压缩 {summary['compressed_bytes'] / 1e6:.2f} MB "
          f"(CR = {summary['compression_ratio']:.1f})")
    return EXIT_OK


def cmd_extract(run: RunConfig) -> int:
    if run.preset:
        document = PresetManager().load_preset(run.preset, **run.preset_params)
        if document is None:
            raise FileNotFoundError(f"预设不存在: {run.preset}")
        structure = load_structure(document)
    else:
        structure = load_structure(run.structure_path)

    extractor = CapacitanceExtractor(run.solver, cache_dir=run.cache_dir, use_cache=run.use_cache)
    result = extractor.run(structure, progress_callback=_progress)
    write_results(run.output_dir, result)

    with np.printoptions(precision=6):
        print("电容矩阵 (F):")
        print(result.capacitance)
    if not result.all_converged:
        logger.error("以下导体的激励未收敛: %s", result.failures)
        write_error_report(run.output_dir, SolverError(f"GMRES 未收敛: {result.failures}"))
        return EXIT_SOLVER_FAILURE
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    cache_dir = Path(args.cache_dir) if args.cache_dir else None
    report = run_verification(args.level, seed=args.seed, cache_dir=cache_dir,
                              suites=args.suite, progress_callback=_progress)
    text = json.dumps(report, ensure_ascii=False, indent=2, default=str)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    for name, outcome in report["suites"].items():
        print(f"{name:<28}{'PASS' if outcome['passed'] else 'FAIL'}  ({outcome['seconds']:.1f} s)")
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAILURE


def cmd_presets(args: argparse.Namespace) -> int:
    manager = PresetManager()
    if args.export:
        document = manager.load_preset(args.export, **parse_params(args.param or []))
        if document is None:
            raise FileNotFoundError(f"预设不存在: {args.export}")
        text = json.dumps(document, ensure_ascii=False, indent=2)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            print(text)
        return EXIT_OK
    for item in manager.list_presets():
        print(f"{item['name']:<26}{item['description']}")
    return EXIT_OK


def main(argv: List[str] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    output_dir = None
    try:
        if args.command == "install-cache":
            return cmd_install_cache(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "presets":
            return cmd_presets(args)
        output_dir = Path(args.output or DEFAULT_OUTPUT_PATH)
        run = RunConfig.from_args(args)
        return cmd_extract(run)
    except ToCapError as exc:
        logger.error("%s", exc)
        if output_dir is not None:
            write_error_report(output_dir, exc)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        logger.error("%s", exc)
        if output_dir is not None:
            write_error_report(output_dir, exc, EXIT_INPUT_ERROR)
        return EXIT_INPUT_ERROR
    except Exception as exc:
        logger.exception("未预期的错误")
        if output_dir is not None:
            write_error_report(output_dir, exc, EXIT_UNEXPECTED)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
