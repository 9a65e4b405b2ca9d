"""
循环合并 (collapse)

把 k 层完美嵌套的矩形循环合并成一层，在线性化的归纳变量上迭代，
循环体开头用除法和取模还原各层的原变量。
"""

import copy
import logging
from functools import reduce
from typing import List, Optional

from ..frontend.ast_nodes import BinOp, Ident, IntLit, const_value, expr_symbols
from ..upir.nodes import DeclNode, LoopNode, Node, UpirModule
from ..upir.traversal import IdAllocator, child_regions, max_id
from ..utils.errors import CollapseError

logger = logging.getLogger(__name__)

FLAT_SUFFIX = "__flat"


def _fold(expr):
    value = const_value(expr)
    return IntLit(value) if value is not None else expr


def _binop(op: str, lhs, rhs):
    if op == "*" and rhs == IntLit(1):
        return lhs
    if op == "*" and lhs == IntLit(1):
        return rhs
    if op in ("+", "-") and rhs == IntLit(0):
        return lhs
    if op == "+" and lhs == IntLit(0):
        return rhs
    if op == "/" and rhs == IntLit(1):
        return lhs
    return _fold(BinOp(op, lhs, rhs))


def trip_count(loop: LoopNode):
    """循环的迭代次数表达式"""
    span = _binop("-", loop.upper, loop.lower)
    if loop.step == IntLit(1):
        return span
    return _binop("/", _binop("+", span, _binop("-", loop.step, IntLit(1))), loop.step)


def clamped_count(count):
    """迭代次数小于 0 时取 0；非常量写成 (count > 0) * count"""
    value = const_value(count)
    if value is not None:
        return IntLit(max(0, value))
    return BinOp("*", BinOp(">", count, IntLit(0)), count)


def loop_nest(loop: LoopNode, depth: int) -> List[LoopNode]:
    """取出 depth 层完美嵌套，不满足时抛 CollapseError"""
    nest = [loop]
    while len(nest) < depth:
        body = nest[-1].body
        if len(body) != 1 or not isinstance(body[0], LoopNode) or body[0].parallel is not None:
            raise CollapseError(f"loop #{loop.id} 的 collapse({depth}) 需要 {depth} 层完美嵌套")
        nest.append(body[0])
    outer_vars = set()
    for level in nest:
        used = set()
        for expr in (level.lower, level.upper, level.step):
            used.update(expr_symbols(expr))
        if used & outer_vars:
            raise CollapseError(
                f"loop #{loop.id} 不是矩形嵌套: {level.var} 的边界依赖外层变量 {', '.join(sorted(used & outer_vars))}"
            )
        outer_vars.add(level.var)
    return nest


def collapse_loops(loop: LoopNode, next_id: Optional[IdAllocator] = None) -> LoopNode:
    """
    合并 loop.collapse 层嵌套

    Args:
        loop: collapse >= 1 的循环，输入不变
        next_id: 新建节点的 id 分配器；缺省时从 loop 内最大 id 之后开始

    Returns:
        合并后的循环，保留最外层循环的 id、sync 和并行标注

    Raises:
        CollapseError: 非完美嵌套或非矩形嵌套
    """
    depth = loop.collapse
    result = copy.deepcopy(loop)
    if depth <= 1:
        return result
    if next_id is None:
        next_id = IdAllocator(max(loop.id, max_id(loop)) + 1)

    nest = loop_nest(result, depth)
    counts = [trip_count(level) for level in nest]
    variables = [level.var for level in nest]
    flat = "_".join(variables) + FLAT_SUFFIX

    prologue: List[Node] = []
    for d, level in enumerate(nest):
        index = Ident(flat)
        inner = reduce(lambda a, b: _binop("*", a, b), counts[d + 1:], IntLit(1))
        if d < depth - 1:
            index = _binop("/", index, inner)
        if d > 0:
            index = _binop("%", index, counts[d])
        value = _binop("+", level.lower, _binop("*", index, level.step))
        prologue.append(DeclNode(id=next_id(), name=level.var, type="i32", init=value))

    # 任一层为空时合并后的循环也不执行
    total = reduce(lambda a, b: _binop("*", a, b), [clamped_count(c) for c in counts])
    flat_item = next((copy.deepcopy(item) for item in result.data if item.symbol == variables[0]), None)
    data = [item for item in result.data if item.symbol not in variables]
    if flat_item is not None:
        flat_item.symbol = flat
        data.append(flat_item)

    sync = list(result.sync)
    for level in nest[1:]:
        sync.extend(level.sync)

    collapsed = LoopNode(id=result.id, var=flat, lower=IntLit(0), upper=total, step=IntLit(1),
                         data=data, collapse=1, sync=sync, parallel=result.parallel,
                         body=prologue + nest[-1].body)
    logger.debug(f"loop #{loop.id}: 合并 {', '.join(variables)} 为 {flat}")
    return collapsed


def _collapse_region(region: List[Node], next_id: IdAllocator) -> int:
    count = 0
    for i, node in enumerate(region):
        if isinstance(node, LoopNode) and node.collapse > 1:
            region[i] = collapse_loops(node, next_id)
            count += 1
        for sub in child_regions(region[i]):
            count += _collapse_region(sub, next_id)
    return count


def collapse_module(module: UpirModule) -> UpirModule:
    """对模块中所有 collapse >= 2 的循环做合并"""
    result = copy.deepcopy(module)
    next_id = IdAllocator.after(result)
    count = 0
    for function in result.functions:
        count += _collapse_region(function.body, next_id)
    logger.debug(f"collapse: 合并了 {count} 个循环")
    return result
