"""
数据属性推断

对 spmd / task / loop 区域内引用的每个符号补全六个字段：
sharing、mapping、access、distribution、allocator、deallocator。
用户写出的字段保持 explicit，推断出的字段标记为 implicit。
"""

import copy
import logging
from typing import Dict, Optional, Set, Tuple

from ..upir.nodes import (
    Attribute, DataItem, DataRegionNode, Distribution, LoopNode, Node, SpmdNode, SyncNode,
    TaskNode, UpirFunction, UpirModule
)
from ..upir.traversal import node_index, walk_with_ancestors
from ..utils.errors import AnalysisError
from .uses import Uses, array_symbols, body_uses, region_uses

logger = logging.getLogger(__name__)

PRIVATE_SHARINGS = ("private", "firstprivate", "lastprivate")
TRANSFER_MAPPINGS = ("to", "from", "tofrom")
DEFAULT_DEALLOCATORS = {"large_cap_mem_alloc": "large_cap_mem_dealloc"}
_SCOPES = (SpmdNode, TaskNode, LoopNode)


def reduction_symbols(node: Node, index: Dict[int, Node]) -> Dict[str, int]:
    """节点登记的 reduction 同步涉及的符号 -> 同步节点 id"""
    symbols: Dict[str, int] = {}
    for ref in getattr(node, "sync", ()):
        sync = index.get(ref)
        if isinstance(sync, SyncNode) and sync.name == "reduction":
            for symbol in sync.data:
                symbols[symbol] = sync.id
    return symbols


def _enclosing_item(ancestors: Tuple[Node, ...], symbol: str) -> Optional[DataItem]:
    for node in reversed(ancestors):
        if isinstance(node, _SCOPES):
            for item in node.data:
                if item.symbol == symbol:
                    return item
    return None


def _declared_in_parallel_scope(ancestors: Tuple[Node, ...], symbol: str) -> bool:
    """符号是否是最近的 spmd/task 区域内声明的局部变量"""
    for node in reversed(ancestors):
        if isinstance(node, (SpmdNode, TaskNode)):
            return symbol in region_uses(node.body).declared
    return False


class _DefaultRules:
    """没有显式属性时的缺省规则"""

    def __init__(self, function: UpirFunction, node: Node, ancestors: Tuple[Node, ...],
                 uses: Uses, reductions: Dict[str, int]):
        self.function = function
        self.node = node
        self.ancestors = ancestors
        self.uses = uses
        self.reductions = reductions

    def is_array(self, symbol: str) -> bool:
        param = self.function.param(symbol)
        return param is not None and param.is_array

    def sharing(self, symbol: str) -> str:
        node = self.node
        if symbol in self.reductions:
            return "private"
        if isinstance(node, LoopNode):
            if symbol == node.var:
                return "private"
            enclosing = _enclosing_item(self.ancestors, symbol)
            if enclosing is not None and enclosing.sharing is not None:
                return enclosing.sharing.value
            return "private" if _declared_in_parallel_scope(self.ancestors, symbol) else "shared"
        if isinstance(node, TaskNode):
            if self.is_array(symbol):
                return "shared"
            if node.kind in ("offload", "remote"):
                return "shared" if symbol in self.uses.writes else "firstprivate"
            enclosing = _enclosing_item(self.ancestors, symbol)
            if enclosing is not None and enclosing.sharing is not None \
                    and enclosing.sharing.value in PRIVATE_SHARINGS:
                return "firstprivate"
            return "firstprivate" if _declared_in_parallel_scope(self.ancestors, symbol) else "shared"
        return "shared"

    def mapping(self, symbol: str, sharing: str) -> str:
        node = self.node
        if not (isinstance(node, TaskNode) and node.kind in ("offload", "remote")):
            return "none"
        if self.is_array(symbol) or sharing == "shared":
            return "tofrom"
        if sharing == "firstprivate":
            return "to"
        return "none"


def _check_contradictions(node: Node, item: DataItem, reductions: Dict[str, int]) -> None:
    sharing, mapping = item.sharing, item.mapping
    if sharing is not None and sharing.visibility == "explicit" and sharing.value in PRIVATE_SHARINGS \
            and mapping is not None and mapping.visibility == "explicit" and mapping.value in TRANSFER_MAPPINGS:
        raise AnalysisError(
            f"节点 #{node.id} 中符号 {item.symbol} 同时被显式声明为 {sharing.value} 和映射 {mapping.value}"
        )
    if item.symbol in reductions and sharing is not None and sharing.visibility == "explicit" \
            and sharing.value != "private":
        raise AnalysisError(
            f"节点 #{node.id} 中 reduction 变量 {item.symbol} 被显式声明为 {sharing.value}"
        )


def complete_item(item: DataItem, rules: Optional[_DefaultRules], uses: Uses) -> None:
    """补全数据项中仍为空的字段"""
    if item.sharing is None:
        value = rules.sharing(item.symbol) if rules is not None else "shared"
        item.sharing = Attribute(value, "implicit")
    if item.mapping is None:
        value = rules.mapping(item.symbol, item.sharing.value) if rules is not None else "none"
        item.mapping = Attribute(value, "implicit")
    if item.access is None:
        item.access = uses.access(item.symbol)
    if item.distribution is None:
        item.distribution = Distribution("block", None, ())
    if item.allocator is None:
        item.allocator = "default_mem_alloc"
    if item.deallocator is None:
        item.deallocator = DEFAULT_DEALLOCATORS.get(item.allocator, "default_mem_dealloc")


def _complete_node(function: UpirFunction, node: Node, ancestors, index) -> int:
    uses = body_uses(node, array_symbols(function))
    reductions = reduction_symbols(node, index)
    for item in node.data:
        _check_contradictions(node, item, reductions)

    added = 0
    if isinstance(node, DataRegionNode):
        rules = None
    else:
        rules = _DefaultRules(function, node, ancestors, uses, reductions)
        present: Set[str] = {item.symbol for item in node.data}
        for symbol in sorted(uses.free | set(reductions)):
            if symbol not in present:
                node.data.append(DataItem(symbol))
                added += 1
    for item in node.data:
        complete_item(item, rules, uses)
    return added


def infer_data_attributes(module: UpirModule) -> UpirModule:
    """
    推断数据属性

    Args:
        module: UPIR 模块，输入不变

    Returns:
        新模块，所有 spmd/task/loop/data 区域的数据项六个字段齐全

    Raises:
        AnalysisError: 显式属性互相矛盾
    """
    result = copy.deepcopy(module)
    index = node_index(result)
    added = 0
    for function in result.functions:
        for node, ancestors in walk_with_ancestors(function):
            if isinstance(node, _SCOPES + (DataRegionNode,)):
                added += _complete_node(function, node, ancestors, index)
    logger.debug(f"数据属性推断: 新增 {added} 个数据项")
    return result
