"""
访问模式推断：按区域内的读写把数据项标为 read-only / write-only / read-write
"""

import copy
import logging

from ..upir.nodes import DataRegionNode, LoopNode, SpmdNode, TaskNode, UpirModule
from ..upir.traversal import walk
from .uses import array_symbols, body_uses

logger = logging.getLogger(__name__)


def infer_access_modes(module: UpirModule) -> UpirModule:
    """
    为尚未确定访问模式的数据项填写 access

    传给函数的数组按 read-write 处理，标量按值传递只算读。

    Args:
        module: UPIR 模块，输入不变

    Returns:
        新模块
    """
    result = copy.deepcopy(module)
    filled = 0
    for function in result.functions:
        arrays = array_symbols(function)
        for node in walk(function):
            if not isinstance(node, (SpmdNode, TaskNode, LoopNode, DataRegionNode)) or not node.data:
                continue
            uses = body_uses(node, arrays)
            for item in node.data:
                if item.access is None:
                    item.access = uses.access(item.symbol)
                    filled += 1
    logger.debug(f"访问模式推断: 填写 {filled} 个数据项")
    return result
