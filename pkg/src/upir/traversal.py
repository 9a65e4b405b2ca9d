"""
UPIR 遍历、编号与规范化
"""

import copy
import logging
from typing import Dict, Iterator, List, Optional, Tuple, Union

from ..utils.errors import UpirValidationError
from .nodes import (
    CallNode, DataRegionNode, ExtensionNode, IfNode, LoopNode, Node, Region, SpmdNode, SyncNode, TaskNode,
    UpirFunction, UpirModule
)

logger = logging.getLogger(__name__)


def child_regions(node: Node) -> List[Region]:
    """节点直接拥有的区域"""
    if isinstance(node, (SpmdNode, LoopNode, TaskNode, DataRegionNode)):
        return [node.body]
    if isinstance(node, IfNode):
        return [node.then] if node.orelse is None else [node.then, node.orelse]
    if isinstance(node, SyncNode) and node.body is not None:
        return [node.body]
    return []


def _regions_of(root: Union[UpirModule, UpirFunction, Region, Node]) -> List[Region]:
    if isinstance(root, UpirModule):
        return [f.body for f in root.functions]
    if isinstance(root, UpirFunction):
        return [root.body]
    if isinstance(root, Node):
        return child_regions(root)
    return [root]


def walk(root) -> Iterator[Node]:
    """前序遍历所有节点（root 是节点时不含 root 本身）"""
    for region in _regions_of(root):
        for node in region:
            yield node
            yield from walk(node)


def walk_with_ancestors(root, ancestors: Tuple[Node, ...] = ()) -> Iterator[Tuple[Node, Tuple[Node, ...]]]:
    """前序遍历，同时给出从外到内的祖先节点"""
    for region in _regions_of(root):
        for node in region:
            yield node, ancestors
            yield from walk_with_ancestors(node, ancestors + (node,))


def walk_through_calls(root, module: UpirModule) -> Iterator[Node]:
    """同 walk，另外进入 upir.call 调用的函数体（每个函数只进入一次）"""
    seen = set()
    pending = [root]
    while pending:
        for node in walk(pending.pop()):
            yield node
            if isinstance(node, CallNode) and node.name not in seen:
                seen.add(node.name)
                callee = module.function(node.name)
                if callee is not None:
                    pending.append(callee)


def node_index(root) -> Dict[int, Node]:
    return {node.id: node for node in walk(root)}


def max_id(root) -> int:
    return max((node.id for node in walk(root)), default=0)


class IdAllocator:
    """为新建节点分配不冲突的 id"""

    def __init__(self, start: int = 1):
        self._next = start

    @classmethod
    def after(cls, module: UpirModule) -> "IdAllocator":
        return cls(max_id(module) + 1)

    def __call__(self) -> int:
        value = self._next
        self._next += 1
        return value


def references(node: Node) -> List[int]:
    """节点引用的其他节点 id"""
    refs: List[int] = []
    if isinstance(node, SpmdNode):
        refs.extend(node.branch)
        refs.extend(node.sync)
        refs.extend(r for r in (node.nested_parent, node.nested_child) if r is not None)
    elif isinstance(node, (LoopNode, TaskNode)):
        refs.extend(node.sync)
    elif isinstance(node, ExtensionNode) and node.attach is not None:
        refs.append(node.attach)
    return refs


def referenced_ids(root) -> set:
    ids = set()
    for node in walk(root):
        ids.update(references(node))
    return ids


def remap_references(node: Node, mapping: Dict[int, int]) -> None:
    def m(ref: int) -> int:
        if ref not in mapping:
            raise UpirValidationError([f"节点 #{node.id} 引用了不存在的节点 #{ref}"])
        return mapping[ref]

    if isinstance(node, SpmdNode):
        node.branch = [m(r) for r in node.branch]
        node.sync = [m(r) for r in node.sync]
        node.nested_parent = m(node.nested_parent) if node.nested_parent is not None else None
        node.nested_child = m(node.nested_child) if node.nested_child is not None else None
    elif isinstance(node, (LoopNode, TaskNode)):
        node.sync = [m(r) for r in node.sync]
    elif isinstance(node, ExtensionNode) and node.attach is not None:
        node.attach = m(node.attach)


def canonicalize(module: UpirModule) -> UpirModule:
    """
    规范化模块：按前序重新编号、改写引用、数据项按符号排序

    Args:
        module: UPIR 模块

    Returns:
        新模块，输入不变
    """
    result = copy.deepcopy(module)
    nodes = list(walk(result))
    mapping: Dict[int, int] = {}
    for new_id, node in enumerate(nodes, start=1):
        if node.id in mapping:
            raise UpirValidationError([f"节点 id #{node.id} 重复"])
        mapping[node.id] = new_id
    for node in nodes:
        remap_references(node, mapping)
        node.id = mapping[node.id]
        data = getattr(node, "data", None)
        if isinstance(data, list) and data and not isinstance(data[0], str):
            data.sort(key=lambda item: item.symbol)
    return result


def find_parent(root, target: Node) -> Optional[Node]:
    for node, ancestors in walk_with_ancestors(root):
        if node is target:
            return ancestors[-1] if ancestors else None
    return None


def enclosing(ancestors: Tuple[Node, ...], kind) -> Optional[Node]:
    """最近的某类祖先"""
    for node in reversed(ancestors):
        if isinstance(node, kind):
            return node
    return None
