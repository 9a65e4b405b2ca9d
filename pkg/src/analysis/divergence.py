"""
分支发散检测

spmd 区域内条件（传递地）依赖 __unit_id() 或 __team_id() 的 if 记入该 spmd 的 branch 列表。
区域内的 upir.call 会进入被调函数：实参依赖单元编号的形参视为依赖单元编号，
CUDA 启动的 spmd 只含一次 kernel 调用，kernel 内的边界判断由此记到该 spmd 上。
只做语法上的依赖传播，不做取值范围分析。
"""

import copy
import logging
from typing import Optional, Set

from ..frontend.ast_nodes import Ident, expr_symbols, expr_uses_intrinsic
from ..upir.nodes import AssignNode, CallNode, DeclNode, IfNode, SpmdNode, UpirModule
from ..upir.traversal import child_regions, walk
from .nesting import direct_spmds

logger = logging.getLogger(__name__)


def _depends_on_unit(expr, tainted: Set[str]) -> bool:
    if expr is None:
        return False
    return expr_uses_intrinsic(expr) or bool(set(expr_symbols(expr)) & tainted)


def unit_dependent_symbols(root, initial: Optional[Set[str]] = None) -> Set[str]:
    """root（spmd 或区域）内取值依赖单元编号的标量（不动点）"""
    tainted: Set[str] = set(initial or ())
    changed = True
    while changed:
        changed = False
        for node in walk(root):
            if isinstance(node, DeclNode):
                name, value = node.name, node.init
            elif isinstance(node, AssignNode) and isinstance(node.target, Ident):
                name, value = node.target.name, node.value
            else:
                continue
            if name not in tainted and _depends_on_unit(value, tainted):
                tainted.add(name)
                changed = True
    return tainted


class _Detector:
    """为一个 spmd 收集发散分支"""

    def __init__(self, spmd: SpmdNode, module: Optional[UpirModule]):
        self.spmd = spmd
        self.module = module
        self.seen: Set[str] = set()

    def run(self) -> None:
        self.collect(self.spmd.body, unit_dependent_symbols(self.spmd), lexical=True)

    def collect(self, region, tainted: Set[str], lexical: bool) -> None:
        for node in region:
            if isinstance(node, SpmdNode):
                # 被调函数里的 spmd 由所在函数自己处理
                if lexical:
                    _Detector(node, self.module).run()
                continue
            if isinstance(node, IfNode) and _depends_on_unit(node.cond, tainted) \
                    and node.id not in self.spmd.branch:
                self.spmd.branch.append(node.id)
            if isinstance(node, CallNode):
                self.follow(node, tainted)
            for sub in child_regions(node):
                self.collect(sub, tainted, lexical)

    def follow(self, call: CallNode, tainted: Set[str]) -> None:
        if self.module is None or call.name in self.seen:
            return
        callee = self.module.function(call.name)
        if callee is None:
            return
        self.seen.add(call.name)
        params = {p.name for p, arg in zip(callee.params, call.args) if _depends_on_unit(arg, tainted)}
        self.collect(callee.body, unit_dependent_symbols(callee.body, params), lexical=False)


def detect_divergence(module: UpirModule) -> UpirModule:
    """
    检测依赖单元编号的分支

    Args:
        module: UPIR 模块，输入不变

    Returns:
        新模块；if 记在最近的外层 spmd 上，经调用到达的 if 记在发起调用的 spmd 上
    """
    result = copy.deepcopy(module)
    for function in result.functions:
        for spmd in direct_spmds(function.body):
            _Detector(spmd, result).run()
    total = sum(len(n.branch) for n in walk(result) if isinstance(n, SpmdNode))
    logger.debug(f"分支发散检测: 共 {total} 个发散分支")
    return result
