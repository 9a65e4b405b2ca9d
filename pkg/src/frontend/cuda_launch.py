"""
CUDA 三尖括号启动的识别与内建变量改写
"""

import logging
from typing import Callable, Mapping

from ..utils.errors import SemanticError
from .ast_nodes import BinOp, Block, Call, CudaBuiltin, Directive, Function, Intrinsic, map_stmt_exprs

logger = logging.getLogger(__name__)

_BUILTIN_TO_INTRINSIC = {
    "threadIdx.x": "__unit_id",
    "blockIdx.x": "__team_id",
    "blockDim.x": "__units_per_team",
    "gridDim.x": "__num_teams",
}


def recognize_cuda_launch(call: Call, functions: Mapping[str, Function],
                          type_of: Callable[[object], str]) -> Directive:
    """
    把 kernel<<<g, b>>>(...) 识别为 cuda-launch 指令

    Args:
        call: 带启动配置的调用语句
        functions: 程序中的函数表
        type_of: 在调用处作用域中求表达式类型的函数

    Returns:
        language 为 cuda-launch、launch_config 为 (g, b) 的 Directive
    """
    if call.launch is None:
        raise SemanticError(f"调用 {call.name} 没有启动配置", call.pos)
    callee = functions.get(call.name)
    if callee is None:
        raise SemanticError(f"找不到被启动的内核函数: {call.name}", call.pos)
    if not callee.is_kernel:
        raise SemanticError(f"函数 {call.name} 没有用 __global__ 标记为内核", call.pos)
    if len(callee.params) != len(call.args):
        raise SemanticError(
            f"内核 {call.name} 需要 {len(callee.params)} 个参数，实际传入 {len(call.args)} 个",
            call.pos
        )

    grid, block = call.launch
    for label, expr in (("网格", grid), ("线程块", block)):
        if type_of(expr) != "int":
            raise SemanticError(f"启动配置中的{label}表达式必须是整数", getattr(expr, "pos", call.pos))

    logger.debug(f"识别 CUDA 启动: {call.name}")
    return Directive("cuda-launch", ("launch",), (), (grid, block), pos=call.pos)


def rewrite_cuda_builtins(body: Block) -> Block:
    """
    内核函数体中的 CUDA 内建变量改写成单元索引内建函数，
    并把 blockDim.x*blockIdx.x 规范成 __team_id()*__units_per_team()
    """
    def rewrite(expr):
        if isinstance(expr, CudaBuiltin):
            name = _BUILTIN_TO_INTRINSIC.get(expr.name)
            if name is None:
                raise SemanticError(f"只支持 x 维的 CUDA 内建变量: {expr.name}", expr.pos)
            return Intrinsic(name, pos=expr.pos)
        if (isinstance(expr, BinOp) and expr.op == "*"
                and expr.lhs == Intrinsic("__units_per_team") and expr.rhs == Intrinsic("__team_id")):
            return BinOp("*", expr.rhs, expr.lhs, pos=expr.pos)
        return expr

    return map_stmt_exprs(body, rewrite)
