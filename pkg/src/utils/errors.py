"""
错误类型定义
"""

from dataclasses import dataclass
from typing import List, Optional


@dataclass(frozen=True)
class SourcePosition:
    """源码位置，行列号从 1 开始"""
    file: str = "<input>"
    line: int = 0
    column: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


class UpircError(Exception):
    """upirc 所有错误的基类"""

    def __init__(self, message: str, position: Optional[SourcePosition] = None):
        super().__init__(message)
        self.message = message
        self.position = position

    def with_file(self, file: str) -> "UpircError":
        """补全文件名（解析时通常只知道行列）"""
        if self.position is not None and self.position.file == "<input>":
            self.position = SourcePosition(file, self.position.line, self.position.column)
        elif self.position is None:
            self.position = SourcePosition(file, 1, 1)
        return self


class ConfigError(UpircError):
    """配置错误"""


# ---- 前端 ----

class FrontendError(UpircError):
    """前端错误"""


class KernelSyntaxError(FrontendError):
    """内核语言语法错误"""


class DirectiveError(FrontendError):
    """指令解析错误：未知构造、非法子句参数、重复子句"""


class AttachError(FrontendError):
    """指令附着到了不合法的语句上"""


class NonCanonicalLoopError(FrontendError):
    """循环指令下的循环不是规范循环"""


class SemanticError(FrontendError):
    """未声明标识符、类型不符等语义错误"""


# ---- UPIR ----

class UpirBuildError(UpircError):
    """构建 UPIR 失败"""


class UpirSyntaxError(UpircError):
    """UPIR 文本不符合语法"""


class UpirValidationError(UpircError):
    """UPIR 结构校验失败"""

    def __init__(self, problems: List[str], position: Optional[SourcePosition] = None):
        super().__init__("UPIR 结构校验失败: " + "; ".join(problems), position)
        self.problems = list(problems)


# ---- 分析 ----

class AnalysisError(UpircError):
    """分析发现矛盾的显式属性"""


# ---- 变换 ----

class PassError(UpircError):
    """变换错误"""


class CollapseError(PassError):
    """循环合并的前置条件不满足"""


class ScheduleError(PassError):
    """调度参数非法"""


class UnrepresentableError(PassError):
    """节点无法用目标编程模型表达"""


class RoundTripError(PassError):
    """生成的源码重新构建后与原模块不一致"""


class LoweringError(PassError):
    """降级到运行时形式失败"""


# ---- 解释器 ----

class InterpreterError(UpircError):
    """解释执行错误"""


class UnmappedAccessError(InterpreterError):
    """在设备空间读取未映射的符号"""


class AsyncPairError(InterpreterError):
    """异步同步的 arrive/wait 不配对"""


class DeadlockError(InterpreterError):
    """调度器静止时仍有单元在等待"""


class AllocationImbalanceError(InterpreterError):
    """程序结束时仍有未释放的分配"""


class InputBindingError(InterpreterError):
    """输入绑定缺失或格式错误"""
