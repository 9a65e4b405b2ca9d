"""
UPIR 区域的符号读写收集
"""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Set

from ..frontend.ast_nodes import ArraySection, Ident, Index, expr_symbols
from ..upir.nodes import (
    AssignNode, CallNode, DataMovementNode, DataUpdateNode, DeclNode, IfNode, LoopNode,
    MmAllocNode, MmDeallocNode, Node, ReturnNode, SpmdNode, SyncNode, TaskNode, UpirFunction
)
from ..upir.traversal import child_regions, walk


@dataclass
class Uses:
    reads: Set[str] = field(default_factory=set)
    writes: Set[str] = field(default_factory=set)
    declared: Set[str] = field(default_factory=set)

    @property
    def free(self) -> Set[str]:
        """区域外声明、区域内引用的符号"""
        return (self.reads | self.writes) - self.declared

    def access(self, symbol: str) -> str:
        read, written = symbol in self.reads, symbol in self.writes
        if written and not read:
            return "write-only"
        if written:
            return "read-write"
        return "read-only"


def _symbols(exprs: Iterable) -> Set[str]:
    names: Set[str] = set()
    for expr in exprs:
        if expr is not None:
            names.update(expr_symbols(expr))
    return names


def _target(uses: Uses, target) -> None:
    uses.writes.add(target.name)
    if isinstance(target, Index):
        for i in target.indices:
            if not isinstance(i, ArraySection):
                uses.reads.update(expr_symbols(i))


def header_uses(node: Node, uses: Uses, arrays: Optional[Set[str]] = None) -> None:
    """
    节点自身（不含区域）的读写

    arrays 是按引用传递的符号；为 None 时传给函数的变量都按可能被改写处理。
    """
    if isinstance(node, DeclNode):
        uses.reads |= _symbols([node.init])
        uses.declared.add(node.name)
    elif isinstance(node, AssignNode):
        _target(uses, node.target)
        uses.reads |= _symbols([node.value])
    elif isinstance(node, IfNode):
        uses.reads |= _symbols([node.cond])
    elif isinstance(node, LoopNode):
        uses.reads |= _symbols([node.lower, node.upper, node.step])
        if node.parallel is not None:
            p = node.parallel
            uses.reads |= _symbols([p.chunk, p.simdlen, p.grainsize, p.num_tasks])
    elif isinstance(node, SpmdNode):
        uses.reads |= _symbols([node.num_teams, node.num_units])
    elif isinstance(node, TaskNode):
        uses.reads |= _symbols(d.target for d in node.depend)
    elif isinstance(node, CallNode):
        for arg in node.args:
            uses.reads |= _symbols([arg])
            # 标量按值传递；数组按引用传递，可能被被调函数改写
            if isinstance(arg, Ident) and (arrays is None or arg.name in arrays):
                uses.writes.add(arg.name)
    elif isinstance(node, ReturnNode):
        uses.reads |= _symbols([node.value])
    elif isinstance(node, SyncNode):
        if node.name in ("reduction", "allreduce", "broadcast", "recv"):
            uses.reads.update(node.data)
            uses.writes.update(node.data)
        else:
            uses.reads.update(node.data)
        for unit in (node.primary, node.secondary):
            if unit is not None:
                uses.reads |= _symbols([unit.unit])
    elif isinstance(node, DataUpdateNode):
        for item in node.items:
            uses.reads |= _symbols([item])
            uses.writes.add(item.name)
    elif isinstance(node, DataMovementNode):
        uses.reads |= {node.src_ptr} | _symbols([node.size])
        uses.writes.add(node.dest_ptr)
    elif isinstance(node, MmAllocNode):
        uses.reads |= _symbols([node.count])
        uses.declared.add(node.symbol)
    elif isinstance(node, MmDeallocNode):
        uses.writes.add(node.symbol)


def region_uses(region, uses: Uses = None, arrays: Optional[Set[str]] = None) -> Uses:
    """
    收集区域内所有节点的读写

    Args:
        region: 节点列表
        uses: 累加到已有结果上
        arrays: 按引用传递的符号，见 header_uses

    Returns:
        Uses；declared 包含区域内声明的局部变量和内层循环的归纳变量
    """
    uses = uses if uses is not None else Uses()
    for node in region:
        header_uses(node, uses, arrays)
        if isinstance(node, LoopNode):
            uses.declared.add(node.var)
        for sub in child_regions(node):
            region_uses(sub, uses, arrays)
    return uses


def body_uses(node: Node, arrays: Optional[Set[str]] = None) -> Uses:
    """节点区域内的读写；循环的归纳变量算作循环自身的写"""
    uses = Uses()
    for sub in child_regions(node):
        region_uses(sub, uses, arrays)
    if isinstance(node, LoopNode):
        uses.writes.add(node.var)
        uses.declared.discard(node.var)
    return uses


def array_symbols(function: UpirFunction) -> Set[str]:
    """函数内的数组：数组参数和 mm_allocator 分配的符号"""
    names = {p.name for p in function.params if p.is_array}
    names.update(n.symbol for n in walk(function) if isinstance(n, MmAllocNode))
    return names
