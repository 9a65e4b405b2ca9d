"""
UPIR 文本打印

每行一个操作，`upir.<名字>` 开头，字段按固定顺序输出，区域用花括号并缩进两个空格。
被引用的节点在行首带 `#N` 标签。
"""

import logging
import re
from typing import List, Optional

from ..frontend.ast_nodes import (
    ArraySection, BinOp, FloatLit, Ident, Index, Intrinsic, IntLit, Neg
)
from ..frontend.c_printer import format_float
from .nodes import (
    ALLOCATORS, DEALLOCATORS, AssignNode, CallNode, DataItem, DataMovementNode, DataRegionNode,
    DataUpdateNode, DeclNode, Depend, ExtensionNode, IfNode, LoopNode, LoopParallel, MmAllocNode,
    MmDeallocNode, Node, ReturnNode, SpmdNode, SyncNode, SyncUnit, TaskNode, UpirFunction,
    UpirModule, UpirParam
)
from .traversal import canonicalize, referenced_ids
from .validator import check_upir

logger = logging.getLogger(__name__)

_CONST_LIKE = re.compile(r"c-?\d")


def format_symbol(name: str) -> str:
    """符号名前加 %；形如 c1 的名字会和常量冲突，需要加引号"""
    if _CONST_LIKE.match(name):
        return f'%"{name}"'
    return f"%{name}"


def format_upir_expr(expr) -> str:
    """把表达式打印成 UPIR 形式：常量 %cN，二元运算全括号"""
    if isinstance(expr, IntLit):
        return f"%c{expr.value}"
    if isinstance(expr, FloatLit):
        return f"%c{format_float(expr.value)}"
    if isinstance(expr, Ident):
        return format_symbol(expr.name)
    if isinstance(expr, Index):
        return format_symbol(expr.name) + "".join(format_subscript(i) for i in expr.indices)
    if isinstance(expr, BinOp):
        return f"({format_upir_expr(expr.lhs)} {expr.op} {format_upir_expr(expr.rhs)})"
    if isinstance(expr, Neg):
        return f"(-{format_upir_expr(expr.operand)})"
    if isinstance(expr, Intrinsic):
        return f"@{expr.name}()"
    raise TypeError(f"无法打印的表达式: {type(expr).__name__}")


def format_subscript(sub) -> str:
    if isinstance(sub, ArraySection):
        parts = [format_upir_expr(sub.lower) if sub.lower is not None else "",
                 format_upir_expr(sub.length) if sub.length is not None else ""]
        if sub.stride is not None:
            parts.append(format_upir_expr(sub.stride))
        return "[" + ":".join(parts) + "]"
    return f"[{format_upir_expr(sub)}]"


def format_type(type_name: str, dims=()) -> str:
    return type_name + "".join(f"[{format_upir_expr(d)}]" if d is not None else "[]" for d in dims)


def format_data_item(item: DataItem) -> str:
    fields: List[str] = []
    if item.sharing is not None:
        fields.append(f"{item.sharing.value}({item.sharing.visibility})")
    if item.mapping is not None:
        mapper = f", {format_symbol(item.mapping.mapper)}" if item.mapping.mapper else ""
        fields.append(f"{item.mapping.value}({item.mapping.visibility}{mapper})")
    if item.access is not None:
        fields.append(item.access)
    if item.distribution is not None:
        fields.append(f"pattern({item.distribution.pattern})")
        if item.distribution.unit_id is not None:
            fields.append(f"unit-id({format_upir_expr(item.distribution.unit_id)})")
        if item.distribution.section:
            fields.append("section(" + "".join(format_subscript(s) for s in item.distribution.section) + ")")
    if item.allocator is not None:
        fields.append(f"allocator({_format_allocator(item.allocator, ALLOCATORS)})")
    if item.deallocator is not None:
        fields.append(f"deallocator({_format_allocator(item.deallocator, DEALLOCATORS)})")
    if item.memcpy is not None:
        fields.append(f"memcpy(@{item.memcpy})")
    return f"{format_symbol(item.symbol)}({', '.join(fields)})"


def _format_allocator(name: str, builtins) -> str:
    return name if name in builtins else format_symbol(name)


def _refs(ids: List[int]) -> str:
    return ", ".join(f"#{i}" for i in ids)


def _format_unit(unit: SyncUnit) -> str:
    target = "*" if unit.unit is None else format_upir_expr(unit.unit)
    return f"{unit.kind}:{target}"


def _format_depend(depend: List[Depend]) -> str:
    return ", ".join(f"{d.mode}: {format_upir_expr(d.target)}" for d in depend)


def format_parallel(parallel: LoopParallel) -> str:
    parts: List[str] = []
    if parallel.kind == "worksharing":
        if parallel.schedule is not None:
            chunk = f", {format_upir_expr(parallel.chunk)}" if parallel.chunk is not None else ""
            parts.append(f"schedule({parallel.schedule}{chunk})")
        if parallel.distribute is not None:
            parts.append(f"distribute({parallel.distribute.replace(',', ', ')})")
        if parallel.nowait:
            parts.append("nowait")
    elif parallel.kind == "simd":
        if parallel.simdlen is not None:
            parts.append(f"simdlen({format_upir_expr(parallel.simdlen)})")
    else:
        if parallel.grainsize is not None:
            parts.append(f"grainsize({format_upir_expr(parallel.grainsize)})")
        if parallel.num_tasks is not None:
            parts.append(f"num_tasks({format_upir_expr(parallel.num_tasks)})")
    return parallel.kind + (f"({', '.join(parts)})" if parts else "")


class UpirPrinter:
    """把规范化后的模块打印成文本"""

    def __init__(self, module: UpirModule):
        self.module = module
        self.refs = referenced_ids(module)
        self.lines: List[str] = []

    def print(self) -> str:
        self.lines = ["upir.module {"]
        for function in self.module.functions:
            self.function(function)
        self.lines.append("}")
        return "\n".join(self.lines) + "\n"

    def emit(self, depth: int, text: str) -> None:
        self.lines.append("  " * depth + text)

    def function(self, function: UpirFunction) -> None:
        kernel = "kernel " if function.is_kernel else ""
        params = ", ".join(self._param(p) for p in function.params)
        returns = f" -> {function.return_type}" if function.return_type else ""
        self.emit(1, f"upir.func {kernel}@{function.name}({params}){returns} {{")
        self.region(function.body, 2)
        self.emit(1, "}")

    @staticmethod
    def _param(param: UpirParam) -> str:
        return f"{format_symbol(param.name)}: {format_type(param.type, param.dims)}"

    def region(self, region, depth: int) -> None:
        for node in region:
            self.node(node, depth)

    def open(self, node: Node, depth: int, head: str, terms: List[str], body=None) -> None:
        label = f"#{node.id} " if node.id in self.refs else ""
        line = label + " ".join([head] + [t for t in terms if t])
        if body is None:
            self.emit(depth, line)
            return
        self.emit(depth, line + " {")
        self.region(body, depth + 1)
        self.emit(depth, "}")

    def node(self, node: Node, depth: int) -> None:
        method = getattr(self, "_" + type(node).__name__, None)
        if method is None:
            raise TypeError(f"无法打印的节点: {type(node).__name__}")
        method(node, depth)

    @staticmethod
    def _data(data: List[DataItem]) -> Optional[str]:
        if not data:
            return None
        return f"data({', '.join(format_data_item(d) for d in data)})"

    def _SpmdNode(self, node: SpmdNode, depth: int) -> None:
        terms = [
            f"target({', '.join(node.targets)})" if node.targets else None,
            f"num_teams({format_upir_expr(node.num_teams)})" if node.num_teams is not None else None,
            f"num_units({format_upir_expr(node.num_units)})" if node.num_units is not None else None,
            self._data(node.data),
            f"nested-parent(#{node.nested_parent})" if node.nested_parent is not None else None,
            f"nested-child(#{node.nested_child})" if node.nested_child is not None else None,
            f"nested-level(%c{node.nested_level})" if node.nested_level is not None else None,
            f"branch({_refs(node.branch)})" if node.branch else None,
            f"sync({_refs(node.sync)})" if node.sync else None,
        ]
        self.open(node, depth, "upir.spmd", terms, node.body)

    def _LoopNode(self, node: LoopNode, depth: int) -> None:
        terms = [
            f"induction({format_symbol(node.var)})",
            f"lowerBound({format_upir_expr(node.lower)})",
            f"upperBound({format_upir_expr(node.upper)})",
            f"step({format_upir_expr(node.step)})",
            self._data(node.data),
            f"collapse(%c{node.collapse})" if node.collapse > 1 else None,
            f"sync({_refs(node.sync)})" if node.sync else None,
        ]
        if node.parallel is None:
            self.open(node, depth, "upir.loop", terms, node.body)
            return
        label = f"#{node.id} " if node.id in self.refs else ""
        self.emit(depth, label + " ".join(["upir.loop"] + [t for t in terms if t]) + " {")
        self.emit(depth + 1, f"upir.loop-parallel {format_parallel(node.parallel)} {{")
        self.region(node.body, depth + 2)
        self.emit(depth + 1, "}")
        self.emit(depth, "}")

    def _TaskNode(self, node: TaskNode, depth: int) -> None:
        terms = [
            f"{node.kind}({node.device}:{node.device_id})" if node.kind != "plain" else None,
            f"depend({_format_depend(node.depend)})" if node.depend else None,
            self._data(node.data),
            f"sync({_refs(node.sync)})" if node.sync else None,
            f"policy({node.policy})" if node.policy else None,
            "async" if node.is_async else None,
        ]
        self.open(node, depth, "upir.task", terms, node.body)

    def _DataRegionNode(self, node: DataRegionNode, depth: int) -> None:
        self.open(node, depth, "upir.data", [self._data(node.data)], node.body)

    def _DataMovementNode(self, node: DataMovementNode, depth: int) -> None:
        args = ", ".join([node.dest_target, format_symbol(node.dest_ptr), node.src_target,
                          format_symbol(node.src_ptr), format_upir_expr(node.size)])
        terms = [
            node.direction,
            f"memcpy(@{node.memcpy})" if node.memcpy else None,
            f"depend({_format_depend(node.depend)})" if node.depend else None,
        ]
        self.open(node, depth, f"upir.data_movement({args})", terms)

    def _DataUpdateNode(self, node: DataUpdateNode, depth: int) -> None:
        args = ", ".join(format_upir_expr(i) for i in node.items)
        terms = [
            node.direction,
            f"device({node.device})",
            f"memcpy(@{node.memcpy})" if node.memcpy else None,
            f"depend({_format_depend(node.depend)})" if node.depend else None,
        ]
        self.open(node, depth, f"upir.data_update({args})", terms)

    def _MmAllocNode(self, node: MmAllocNode, depth: int) -> None:
        allocator = _format_allocator(node.allocator, ALLOCATORS)
        self.open(node, depth, f"upir.mm_allocator({allocator}) {format_symbol(node.symbol)} : "
                               f"{format_type(node.element_type, (node.count,))}", [])

    def _MmDeallocNode(self, node: MmDeallocNode, depth: int) -> None:
        deallocator = _format_allocator(node.deallocator, DEALLOCATORS)
        self.open(node, depth, f"upir.mm_deallocator({deallocator}) {format_symbol(node.symbol)}", [])

    def _SyncNode(self, node: SyncNode, depth: int) -> None:
        operation = None
        if node.operation is not None:
            operation = f"operation({node.operation})"
        terms = [
            node.name,
            "sync" if node.mode == "sync" else f"async({node.step})",
            f"primary({_format_unit(node.primary)})" if node.primary else None,
            f"secondary({_format_unit(node.secondary)})" if node.secondary else None,
            operation,
            f"data({', '.join(format_symbol(d) for d in node.data)})" if node.data else None,
            f"lock({format_symbol(node.lock)})" if node.lock else None,
            "implicit" if node.implicit else None,
        ]
        self.open(node, depth, "upir.sync", terms, node.body)

    def _ExtensionNode(self, node: ExtensionNode, depth: int) -> None:
        label = f"#{node.id} " if node.id in self.refs else ""
        attach = f" attach(#{node.attach})" if node.attach is not None else ""
        self.emit(depth, f"{label}upir.ext{attach} {{")
        for key, value in node.entries:
            if value is None:
                self.emit(depth + 1, key)
            elif isinstance(value, str):
                self.emit(depth + 1, f"{key} = {quote_string(value)}")
            elif isinstance(value, list):
                self.emit(depth + 1, f"{key} = [{', '.join(format_symbol(v) for v in value)}]")
            else:
                self.emit(depth + 1, f"{key} = {format_upir_expr(value)}")
        self.emit(depth, "}")

    def _IfNode(self, node: IfNode, depth: int) -> None:
        label = f"#{node.id} " if node.id in self.refs else ""
        self.emit(depth, f"{label}upir.if {format_upir_expr(node.cond)} {{")
        self.region(node.then, depth + 1)
        if node.orelse is not None:
            self.emit(depth, "} else {")
            self.region(node.orelse, depth + 1)
        self.emit(depth, "}")

    def _DeclNode(self, node: DeclNode, depth: int) -> None:
        init = f" = {format_upir_expr(node.init)}" if node.init is not None else ""
        self.open(node, depth, f"upir.decl {format_symbol(node.name)} : {node.type}{init}", [])

    def _AssignNode(self, node: AssignNode, depth: int) -> None:
        self.open(node, depth,
                  f"upir.assign {format_upir_expr(node.target)} = {format_upir_expr(node.value)}", [])

    def _CallNode(self, node: CallNode, depth: int) -> None:
        args = ", ".join(format_upir_expr(a) for a in node.args)
        self.open(node, depth, f"upir.call @{node.name}({args})", [])

    def _ReturnNode(self, node: ReturnNode, depth: int) -> None:
        value = f" {format_upir_expr(node.value)}" if node.value is not None else ""
        self.open(node, depth, f"upir.return{value}", [])


def quote_string(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def print_upir(module: UpirModule, validate: bool = True) -> str:
    """
    打印 UPIR 模块

    Args:
        module: UPIR 模块
        validate: 是否先做结构校验

    Returns:
        规范文本
    """
    if validate:
        check_upir(module)
    text = UpirPrinter(canonicalize(module)).print()
    logger.debug(f"打印 UPIR: {len(text.splitlines())} 行")
    return text
