"""异常定义与退出码"""

# 退出码约定
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT_ERROR = 2
EXIT_SOLVER_FAILURE = 3
EXIT_CACHE_ERROR = 4
EXIT_VERIFY_FAILURE = 5


class ToCapError(Exception):
    """所有可预期错误的基类"""

    exit_code = EXIT_UNEXPECTED

    def to_report(self) -> dict:
        """结构化错误报告"""
        return {
            "type": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class StructureError(ToCapError, ValueError):
    """输入结构错误（体素冲突、空结构、参数非法等）"""

    exit_code = EXIT_INPUT_ERROR


class KernelContractError(ToCapError, ValueError):
    """核函数/张量调用违反约定"""

    exit_code = EXIT_INPUT_ERROR


class CacheError(ToCapError):
    """核张量缓存损坏或不匹配"""

    exit_code = EXIT_CACHE_ERROR


class PreconditionerError(ToCapError):
    """预条件子构建失败"""

    exit_code = EXIT_SOLVER_FAILURE

    def __init__(self, message: str, box: tuple = None):
        super().__init__(message)
        self.box = box


class SolverError(ToCapError):
    """求解失败或规模超限"""

    exit_code = EXIT_SOLVER_FAILURE
