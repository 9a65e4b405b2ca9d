"""
隐式同步物化

worksharing 循环（没有 nowait）之后、每个 spmd 区域末尾补上 implicit barrier。
reduction 子句在构建时已经变成登记在所属节点 sync 列表中的 SyncNode。
"""

import copy
import logging
from typing import List

from ..upir.nodes import LoopNode, Node, SpmdNode, SyncNode, UpirModule
from ..upir.traversal import IdAllocator, child_regions

logger = logging.getLogger(__name__)


def _is_implicit_barrier(node: Node) -> bool:
    return isinstance(node, SyncNode) and node.name == "barrier" and node.implicit


def _is_sync_barrier(node: Node) -> bool:
    return (isinstance(node, SyncNode) and node.name == "barrier" and node.mode == "sync"
            and node.body is None)


def _needs_barrier(node: Node) -> bool:
    return (isinstance(node, LoopNode) and node.parallel is not None
            and node.parallel.kind == "worksharing" and not node.parallel.nowait)


class _Materializer:
    def __init__(self, module: UpirModule, reuse_explicit: bool = False):
        self.next_id = IdAllocator.after(module)
        self.added = 0
        self.satisfies = _is_sync_barrier if reuse_explicit else _is_implicit_barrier

    def barrier(self) -> SyncNode:
        self.added += 1
        return SyncNode(id=self.next_id(), name="barrier", implicit=True)

    def region(self, region: List[Node]) -> None:
        index = 0
        while index < len(region):
            node = region[index]
            for sub in child_regions(node):
                self.region(sub)
            if isinstance(node, SpmdNode) and not (node.body and self.satisfies(node.body[-1])):
                node.body.append(self.barrier())
            if _needs_barrier(node):
                after = index + 1
                while after < len(region) and isinstance(region[after], SyncNode) \
                        and region[after].id in node.sync:
                    after += 1
                if not (after < len(region) and self.satisfies(region[after])):
                    region.insert(after, self.barrier())
                index = after
            index += 1


def materialize_implicit_sync(module: UpirModule, reuse_explicit: bool = False) -> UpirModule:
    """
    物化语言语义要求的隐式 barrier

    Args:
        module: UPIR 模块，输入不变
        reuse_explicit: 紧跟着的显式同步 barrier 也算已满足；barrier 消除之后重新物化时使用

    Returns:
        新模块；已有隐式 barrier 的位置不会重复添加
    """
    result = copy.deepcopy(module)
    materializer = _Materializer(result, reuse_explicit)
    for function in result.functions:
        materializer.region(function.body)
    logger.debug(f"隐式同步: 新增 {materializer.added} 个 barrier")
    return result
