"""
表达式的 Lark Transformer，内核语言和指令子句共用
"""

import logging
from typing import Optional

from lark import Transformer, v_args

from ..utils.errors import KernelSyntaxError, SemanticError, SourcePosition
from .ast_nodes import (
    ArraySection, BinOp, CudaBuiltin, FloatLit, Ident, Index, Intrinsic, IntLit, INTRINSICS, Neg
)

logger = logging.getLogger(__name__)

CUDA_BUILTINS = (
    "threadIdx.x", "blockIdx.x", "blockDim.x", "gridDim.x",
    "threadIdx.y", "blockIdx.y", "blockDim.y", "gridDim.y",
    "threadIdx.z", "blockIdx.z", "blockDim.z", "gridDim.z",
)


@v_args(meta=True)
class ExprBuilder(Transformer):
    """
    把表达式解析树转换成 AST

    base 是整段文本在源文件中的起点，用于把指令内部的行列号换算回文件坐标。
    """

    def __init__(self, base: Optional[SourcePosition] = None):
        super().__init__()
        self.base = base

    def position(self, meta) -> Optional[SourcePosition]:
        if getattr(meta, "empty", True):
            return None
        return self.offset(meta.line, meta.column)

    def offset(self, line: int, column: int) -> SourcePosition:
        if self.base is None:
            return SourcePosition(line=line, column=column)
        if line == 1:
            return SourcePosition(self.base.file, self.base.line, self.base.column + column - 1)
        return SourcePosition(self.base.file, self.base.line + line - 1, column)

    def token_position(self, token) -> SourcePosition:
        return self.offset(token.line, token.column)

    # ---- 字面量与名字 ----

    def int_lit(self, meta, children):
        return IntLit(int(children[0]), pos=self.position(meta))

    def float_lit(self, meta, children):
        return FloatLit(float(str(children[0]).rstrip("fF")), pos=self.position(meta))

    def ident(self, meta, children):
        return Ident(str(children[0]), pos=self.position(meta))

    def index(self, meta, children):
        return Index(str(children[0]), tuple(children[1:]), pos=self.position(meta))

    def sub_index(self, meta, children):
        return children[0]

    def sub_section(self, meta, children):
        lower, length, stride = children
        return ArraySection(lower, length, stride)

    def intrinsic(self, meta, children):
        name = str(children[0])
        if name not in INTRINSICS:
            raise SemanticError(f"不支持的函数调用表达式: {name}()", self.position(meta))
        return Intrinsic(name, pos=self.position(meta))

    def member(self, meta, children):
        name = f"{children[0]}.{children[1]}"
        if name not in CUDA_BUILTINS:
            raise KernelSyntaxError(f"不支持的成员访问: {name}", self.position(meta))
        return CudaBuiltin(name, pos=self.position(meta))

    # ---- 运算 ----

    def neg(self, meta, children):
        operand = children[0]
        if isinstance(operand, IntLit):
            return IntLit(-operand.value, pos=self.position(meta))
        if isinstance(operand, FloatLit):
            return FloatLit(-operand.value, pos=self.position(meta))
        return Neg(operand, pos=self.position(meta))

    def _binop(self, op, meta, children):
        return BinOp(op, children[0], children[1], pos=self.position(meta))

    def add(self, meta, children):
        return self._binop("+", meta, children)

    def sub(self, meta, children):
        return self._binop("-", meta, children)

    def mul(self, meta, children):
        return self._binop("*", meta, children)

    def div(self, meta, children):
        return self._binop("/", meta, children)

    def mod(self, meta, children):
        return self._binop("%", meta, children)

    def lt(self, meta, children):
        return self._binop("<", meta, children)

    def le(self, meta, children):
        return self._binop("<=", meta, children)

    def gt(self, meta, children):
        return self._binop(">", meta, children)

    def ge(self, meta, children):
        return self._binop(">=", meta, children)

    def eq(self, meta, children):
        return self._binop("==", meta, children)

    def ne(self, meta, children):
        return self._binop("!=", meta, children)
