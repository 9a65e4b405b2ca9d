"""
冗余 barrier 消除
"""

import copy
import logging
from typing import Dict, List

from ..upir.nodes import Node, SyncNode, UpirModule
from ..upir.traversal import child_regions, remap_references, walk

logger = logging.getLogger(__name__)


def is_plain_barrier(node: Node) -> bool:
    return (isinstance(node, SyncNode) and node.name == "barrier" and node.mode == "sync"
            and node.body is None)


def count_barriers(module: UpirModule) -> int:
    return sum(1 for node in walk(module) if is_plain_barrier(node))


def _merge_region(region: List[Node], removed: Dict[int, int]) -> None:
    merged: List[Node] = []
    for node in region:
        previous = merged[-1] if merged else None
        if is_plain_barrier(node) and previous is not None and is_plain_barrier(previous):
            # 保留显式的那一个
            if previous.implicit and not node.implicit:
                removed[previous.id] = node.id
                merged[-1] = node
            else:
                removed[node.id] = previous.id
            continue
        merged.append(node)
    region[:] = merged
    for node in region:
        for sub in child_regions(node):
            _merge_region(sub, removed)


def eliminate_redundant_barriers(module: UpirModule) -> UpirModule:
    """
    合并相邻的 barrier

    同一区域内紧挨着的两个同步 barrier 合并为一个，显式的优先保留；
    指向被删除 barrier 的引用改为指向保留的那个。

    Args:
        module: 已物化隐式同步的模块，输入不变

    Returns:
        新模块
    """
    result = copy.deepcopy(module)
    before = count_barriers(result)
    removed: Dict[int, int] = {}
    for function in result.functions:
        _merge_region(function.body, removed)

    if removed:
        # 连续合并时被删节点可能指向另一个被删节点
        def resolve(ref: int) -> int:
            while ref in removed:
                ref = removed[ref]
            return ref

        mapping = {node.id: node.id for node in walk(result)}
        mapping.update({ref: resolve(ref) for ref in removed})
        for node in walk(result):
            remap_references(node, mapping)
            sync = getattr(node, "sync", None)
            if isinstance(sync, list):
                node.sync = list(dict.fromkeys(sync))
    logger.debug(f"barrier 消除: {before} -> {before - len(removed)}")
    return result
