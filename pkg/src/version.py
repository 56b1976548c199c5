"""版本信息 - 单一来源"""

__version__ = "0.3.0"
__author__ = "rayL_K"
__app_name__ = "ToCap"

VERSION_INFO = {
    "version": __version__,
    "company_name": __author__,
    "product_name": __app_name__,
    "description": "ToCap - 体素结构电容提取",
    "copyright": f"Copyright © 2025 {__author__}",
}


def get_version_string() -> str:
    """获取显示用的版本字符串"""
    return f"{__app_name__} v{__version__} by {__author__}"


def get_version_tuple() -> tuple:
    """获取版本元组，写入缓存清单"""
    parts = __version__.split(".")
    while len(parts) < 3:
        parts.append("0")
    return tuple(int(p) for p in parts[:3])
