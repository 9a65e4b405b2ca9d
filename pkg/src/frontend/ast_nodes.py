"""
内核语言 AST 定义
"""

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple, Union

from ..utils.errors import SourcePosition

SCALAR_TYPES = ("int", "float", "double")
ARITH_OPS = ("+", "-", "*", "/", "%")
COMPARE_OPS = ("<", "<=", ">", ">=", "==", "!=")
INTRINSICS = ("__unit_id", "__team_id", "__units_per_team", "__num_teams")


def _pos() -> Optional[SourcePosition]:
    return field(default=None, compare=False, repr=False)


# ---- 表达式 ----

@dataclass(frozen=True)
class IntLit:
    value: int
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class FloatLit:
    value: float
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Ident:
    name: str
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class ArraySection:
    """数组段 [lower : length : stride]，缺省项为 None"""
    lower: Optional["Expr"] = None
    length: Optional["Expr"] = None
    stride: Optional["Expr"] = None


@dataclass(frozen=True)
class Index:
    """数组下标访问，下标可以是表达式或数组段（仅子句中）"""
    name: str
    indices: Tuple[Union["Expr", ArraySection], ...]
    pos: Optional[SourcePosition] = _pos()

    @property
    def is_section(self) -> bool:
        return any(isinstance(i, ArraySection) for i in self.indices)


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "Expr"
    rhs: "Expr"
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Intrinsic:
    """单元索引内建函数，如 __unit_id()"""
    name: str
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class CudaBuiltin:
    """CUDA 内建变量 threadIdx.x 等，识别阶段会被改写"""
    name: str
    pos: Optional[SourcePosition] = _pos()


Expr = Union[IntLit, FloatLit, Ident, Index, BinOp, Neg, Intrinsic, CudaBuiltin]


# ---- 语句 ----

@dataclass(frozen=True)
class Decl:
    ctype: str
    name: str
    init: Optional[Expr] = None
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Assign:
    target: Union[Ident, Index]
    value: Expr
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class ForUpdate:
    """for 循环的增量部分：var op= amount"""
    var: str
    op: str
    amount: Expr


@dataclass(frozen=True)
class For:
    init: Union[Decl, Assign]
    cond: Expr
    update: ForUpdate
    body: "Stmt"
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    orelse: Optional["Stmt"] = None
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Block:
    stmts: Tuple["Stmt", ...] = ()
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple[Expr, ...] = ()
    launch: Optional[Tuple[Expr, Expr]] = None
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Return:
    value: Optional[Expr] = None
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class PragmaLine:
    """尚未解析的 #pragma 行"""
    text: str
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Clause:
    """
    指令子句

    modifier 是冒号前缀（reduction 的运算符、map 的类型等），
    args 是表达式或带数组段的变量；扩展子句只保留原文 raw。
    """
    name: str
    modifier: Optional[str] = None
    args: Tuple[Expr, ...] = ()
    has_parens: bool = False
    extension: bool = False
    raw: str = ""


@dataclass(frozen=True)
class Directive:
    language: str
    constructs: Tuple[str, ...]
    clauses: Tuple[Clause, ...] = ()
    launch_config: Optional[Tuple[Expr, Expr]] = None
    pos: Optional[SourcePosition] = _pos()

    def clause(self, name: str) -> Optional[Clause]:
        for c in self.clauses:
            if c.name == name:
                return c
        return None

    def clauses_named(self, name: str) -> Tuple[Clause, ...]:
        return tuple(c for c in self.clauses if c.name == name)

    def has(self, construct: str) -> bool:
        return construct in self.constructs


@dataclass(frozen=True)
class DirectiveStmt:
    """独立指令（barrier、taskwait、update、wait）"""
    directive: Directive
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Annotated:
    """附着了指令的语句"""
    directive: Directive
    stmt: "Stmt"
    pos: Optional[SourcePosition] = _pos()


Stmt = Union[Decl, Assign, For, If, Block, Call, Return, PragmaLine, DirectiveStmt, Annotated]


# ---- 顶层 ----

@dataclass(frozen=True)
class Param:
    """参数；dims 为空表示标量，每个元素是该维的长度（None 表示未给出）"""
    ctype: str
    name: str
    dims: Tuple[Optional[Expr], ...] = ()

    @property
    def is_array(self) -> bool:
        return bool(self.dims)


@dataclass(frozen=True)
class Function:
    name: str
    return_type: str
    params: Tuple[Param, ...]
    body: Block
    is_kernel: bool = False
    pos: Optional[SourcePosition] = _pos()


@dataclass(frozen=True)
class Program:
    functions: Tuple[Function, ...] = ()
    file: str = field(default="<input>", compare=False)

    def function(self, name: str) -> Optional[Function]:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    def directives(self) -> Iterator[Directive]:
        """按源码顺序列出所有指令"""
        for f in self.functions:
            yield from _stmt_directives(f.body)


def _stmt_directives(stmt) -> Iterator[Directive]:
    if isinstance(stmt, Annotated):
        yield stmt.directive
        yield from _stmt_directives(stmt.stmt)
    elif isinstance(stmt, DirectiveStmt):
        yield stmt.directive
    elif isinstance(stmt, Block):
        for s in stmt.stmts:
            yield from _stmt_directives(s)
    elif isinstance(stmt, For):
        yield from _stmt_directives(stmt.body)
    elif isinstance(stmt, If):
        yield from _stmt_directives(stmt.then)
        if stmt.orelse is not None:
            yield from _stmt_directives(stmt.orelse)


def expr_symbols(expr) -> Iterator[str]:
    """表达式中引用的符号名（含数组名）"""
    if isinstance(expr, Ident):
        yield expr.name
    elif isinstance(expr, Index):
        yield expr.name
        for i in expr.indices:
            if isinstance(i, ArraySection):
                for part in (i.lower, i.length, i.stride):
                    if part is not None:
                        yield from expr_symbols(part)
            else:
                yield from expr_symbols(i)
    elif isinstance(expr, BinOp):
        yield from expr_symbols(expr.lhs)
        yield from expr_symbols(expr.rhs)
    elif isinstance(expr, Neg):
        yield from expr_symbols(expr.operand)


def expr_uses_intrinsic(expr, names=("__unit_id", "__team_id")) -> bool:
    if isinstance(expr, Intrinsic):
        return expr.name in names
    if isinstance(expr, Index):
        return any(not isinstance(i, ArraySection) and expr_uses_intrinsic(i, names)
                   for i in expr.indices)
    if isinstance(expr, BinOp):
        return expr_uses_intrinsic(expr.lhs, names) or expr_uses_intrinsic(expr.rhs, names)
    if isinstance(expr, Neg):
        return expr_uses_intrinsic(expr.operand, names)
    return False


def map_expr(expr, fn):
    """自底向上改写表达式"""
    if isinstance(expr, Index):
        new_indices = tuple(
            ArraySection(*(map_expr(p, fn) if p is not None else None
                           for p in (i.lower, i.length, i.stride)))
            if isinstance(i, ArraySection) else map_expr(i, fn)
            for i in expr.indices
        )
        expr = Index(expr.name, new_indices, pos=expr.pos)
    elif isinstance(expr, BinOp):
        expr = BinOp(expr.op, map_expr(expr.lhs, fn), map_expr(expr.rhs, fn), pos=expr.pos)
    elif isinstance(expr, Neg):
        expr = Neg(map_expr(expr.operand, fn), pos=expr.pos)
    return fn(expr)


def const_value(expr) -> Optional[int]:
    """整数常量折叠，非常量返回 None"""
    if isinstance(expr, IntLit):
        return expr.value
    if isinstance(expr, Neg):
        v = const_value(expr.operand)
        return None if v is None else -v
    if isinstance(expr, BinOp) and expr.op in ARITH_OPS:
        a, b = const_value(expr.lhs), const_value(expr.rhs)
        if a is None or b is None:
            return None
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if b == 0:
            return None
        if expr.op == "/":
            return c_div(a, b)
        return c_mod(a, b)
    return None


def c_div(a: int, b: int) -> int:
    """C 语义的整数除法（向零截断）"""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def c_mod(a: int, b: int) -> int:
    return a - c_div(a, b) * b


def map_stmt_exprs(stmt, fn):
    """对语句中的每个表达式应用 map_expr(expr, fn)，返回新语句"""
    def m(expr):
        return None if expr is None else map_expr(expr, fn)

    if isinstance(stmt, Decl):
        return Decl(stmt.ctype, stmt.name, m(stmt.init), pos=stmt.pos)
    if isinstance(stmt, Assign):
        return Assign(m(stmt.target), m(stmt.value), pos=stmt.pos)
    if isinstance(stmt, For):
        update = ForUpdate(stmt.update.var, stmt.update.op, m(stmt.update.amount))
        return For(map_stmt_exprs(stmt.init, fn), m(stmt.cond), update,
                   map_stmt_exprs(stmt.body, fn), pos=stmt.pos)
    if isinstance(stmt, If):
        orelse = map_stmt_exprs(stmt.orelse, fn) if stmt.orelse is not None else None
        return If(m(stmt.cond), map_stmt_exprs(stmt.then, fn), orelse, pos=stmt.pos)
    if isinstance(stmt, Block):
        return Block(tuple(map_stmt_exprs(s, fn) for s in stmt.stmts), pos=stmt.pos)
    if isinstance(stmt, Call):
        launch = (m(stmt.launch[0]), m(stmt.launch[1])) if stmt.launch is not None else None
        return Call(stmt.name, tuple(m(a) for a in stmt.args), launch, pos=stmt.pos)
    if isinstance(stmt, Return):
        return Return(m(stmt.value), pos=stmt.pos)
    if isinstance(stmt, Annotated):
        return Annotated(stmt.directive, map_stmt_exprs(stmt.stmt, fn), pos=stmt.pos)
    return stmt


def assigned_names(stmt) -> set:
    """语句中被写入的符号（标量赋值、数组元素赋值、循环增量）"""
    names = set()
    if isinstance(stmt, Assign):
        names.add(stmt.target.name)
    elif isinstance(stmt, For):
        names |= assigned_names(stmt.init)
        names.add(stmt.update.var)
        names |= assigned_names(stmt.body)
    elif isinstance(stmt, If):
        names |= assigned_names(stmt.then)
        if stmt.orelse is not None:
            names |= assigned_names(stmt.orelse)
    elif isinstance(stmt, Block):
        for s in stmt.stmts:
            names |= assigned_names(s)
    elif isinstance(stmt, Annotated):
        names |= assigned_names(stmt.stmt)
    elif isinstance(stmt, Decl) and stmt.init is not None:
        names.add(stmt.name)
    return names
