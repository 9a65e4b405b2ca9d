"""
变换流程管理
"""

import logging
from abc import ABC, abstractmethod
from typing import Callable, Dict, Iterable, List

from ..analysis import ANALYSES
from ..upir.nodes import UpirModule
from ..utils.errors import PassError

logger = logging.getLogger(__name__)


class Pass(ABC):
    """模块到模块的变换，输入模块保持不变"""

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @abstractmethod
    def run(self, module: UpirModule) -> UpirModule:
        pass


class FunctionPass(Pass):
    """把一个 module -> module 函数包装成 Pass"""

    def __init__(self, name: str, fn: Callable[[UpirModule], UpirModule]):
        self._name = name
        self.fn = fn

    @property
    def name(self) -> str:
        return self._name

    def run(self, module: UpirModule) -> UpirModule:
        return self.fn(module)


class PassManager:
    """按加入顺序依次执行变换"""

    def __init__(self):
        self.passes: List[Pass] = []

    def add_pass(self, pass_: Pass) -> "PassManager":
        self.passes.append(pass_)
        return self

    def run(self, module: UpirModule) -> UpirModule:
        """
        依次执行所有变换

        Args:
            module: UPIR 模块

        Returns:
            变换后的模块
        """
        for pass_ in self.passes:
            logger.debug(f"执行 pass: {pass_.name}")
            module = pass_.run(module)
        logger.info(f"流程完成: {', '.join(p.name for p in self.passes) or '(空)'}")
        return module


def registered_passes() -> Dict[str, Callable[[UpirModule], UpirModule]]:
    """--passes 可用的名字：五个分析加上 barrier-elim 和 collapse"""
    from .barrier_elimination import eliminate_redundant_barriers
    from .loop_collapse import collapse_module

    passes = dict(ANALYSES)
    passes["barrier-elim"] = eliminate_redundant_barriers
    passes["collapse"] = collapse_module
    return passes


def build_pipeline(names: Iterable[str]) -> PassManager:
    """
    按名字组装流程；分析按固定顺序排在变换之前

    Args:
        names: pass 名列表

    Returns:
        PassManager
    """
    available = registered_passes()
    names = list(names)
    unknown = [n for n in names if n not in available]
    if unknown:
        raise PassError(f"未知的 pass: {', '.join(unknown)}")
    manager = PassManager()
    for name in ANALYSES:
        if name in names:
            manager.add_pass(FunctionPass(name, available[name]))
    for name in names:
        if name not in ANALYSES and all(p.name != name for p in manager.passes):
            manager.add_pass(FunctionPass(name, available[name]))
    return manager
