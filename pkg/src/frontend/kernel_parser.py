"""
内核语言解析：语法分析、指令附着与作用域检查
"""

import logging
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Set, Tuple

from lark import Lark, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, VisitError

from ..utils.errors import (
    AttachError, FrontendError, KernelSyntaxError, NonCanonicalLoopError, SemanticError,
    SourcePosition
)
from .ast_nodes import (
    Annotated, ArraySection, Assign, BinOp, Block, Call, CudaBuiltin, Decl, Directive,
    DirectiveStmt, FloatLit, For, ForUpdate, Function, Ident, If, Index, Intrinsic, IntLit, Neg,
    Param, PragmaLine, Program, Return, assigned_names, const_value, expr_symbols
)
from .c_printer import format_directive
from .cuda_launch import recognize_cuda_launch, rewrite_cuda_builtins
from .directive_parser import LANGUAGES, is_loop_directive, is_standalone, parse_directive
from .expr_builder import ExprBuilder
from .grammar import KERNEL_GRAMMAR

logger = logging.getLogger(__name__)

_PARSER = Lark(KERNEL_GRAMMAR, parser="lalr", propagate_positions=True)

_PRAGMA_LANGUAGE = re.compile(r"#\s*pragma\s+([A-Za-z_]\w*)")
_TYPE_RANK = {"int": 0, "float": 1, "double": 2}


@v_args(meta=True)
class _KernelBuilder(ExprBuilder):
    """解析树到未检查的 AST"""

    def start(self, meta, children):
        return list(children)

    def function(self, meta, children):
        is_kernel = children[0] is not None
        params = tuple(c for c in children[3:-1] if isinstance(c, Param))
        return Function(str(children[2]), children[1], params, children[-1], is_kernel,
                        pos=self.position(meta))

    def type_name(self, meta, children):
        return str(children[0])

    def array_or_scalar_param(self, meta, children):
        return Param(children[0], str(children[1]), tuple(children[2:]))

    def pointer_param(self, meta, children):
        return Param(children[0], str(children[1]), (None,))

    def dim(self, meta, children):
        return children[0] if children else None

    def block(self, meta, children):
        return Block(tuple(c for c in children if c is not None), pos=self.position(meta))

    def decl(self, meta, children):
        init = children[2] if len(children) > 2 else None
        return Decl(children[0], str(children[1]), init, pos=self.position(meta))

    def assign(self, meta, children):
        target, op, value = children[0], str(children[1]), children[2]
        if op != "=":
            # 复合赋值展开成 x = x op e
            value = BinOp(op[0], target, value, pos=value.pos)
        return Assign(target, value, pos=self.position(meta))

    def lv_ident(self, meta, children):
        return Ident(str(children[0]), pos=self.position(meta))

    def lv_index(self, meta, children):
        return Index(str(children[0]), tuple(children[1:]), pos=self.position(meta))

    def plain_call(self, meta, children):
        args = tuple(c for c in children[1:] if c is not None)
        return Call(str(children[0]), args, pos=self.position(meta))

    def launch_call(self, meta, children):
        args = tuple(c for c in children[3:] if c is not None)
        return Call(str(children[0]), args, (children[1], children[2]), pos=self.position(meta))

    def return_stmt(self, meta, children):
        return Return(children[0] if children else None, pos=self.position(meta))

    def if_stmt(self, meta, children):
        orelse = children[2] if len(children) > 2 else None
        return If(children[0], _as_stmt(children[1]), _as_stmt(orelse) if orelse is not None else None,
                  pos=self.position(meta))

    def for_stmt(self, meta, children):
        init, cond, update, body = children
        return For(init, cond, update, _as_stmt(body), pos=self.position(meta))

    def pragma(self, meta, children):
        return PragmaLine(str(children[0]), pos=self.token_position(children[0]))

    def empty_stmt(self, meta, children):
        return None

    def post_inc(self, meta, children):
        return ForUpdate(str(children[0]), "+", IntLit(1))

    def pre_inc(self, meta, children):
        return ForUpdate(str(children[0]), "+", IntLit(1))

    def post_dec(self, meta, children):
        return ForUpdate(str(children[0]), "-", IntLit(1))

    def pre_dec(self, meta, children):
        return ForUpdate(str(children[0]), "-", IntLit(1))

    def step_update(self, meta, children):
        var, op, amount = str(children[0]), str(children[1]), children[2]
        if op != "=":
            return ForUpdate(var, op[0], amount)
        if isinstance(amount, BinOp) and amount.op in ("+", "-") and amount.lhs == Ident(var):
            return ForUpdate(var, amount.op, amount.rhs)
        if isinstance(amount, BinOp) and amount.op == "+" and amount.rhs == Ident(var):
            return ForUpdate(var, "+", amount.lhs)
        return ForUpdate(var, "=", amount)


def _as_stmt(stmt):
    return Block(()) if stmt is None else stmt


# ---- 规范循环 ----

@dataclass(frozen=True)
class CanonicalLoop:
    """规范循环的组成：var 从 lower 开始，按 step（带符号）前进，直到不满足 var op bound"""
    var: str
    lower: object
    op: str
    bound: object
    step: object
    step_value: Optional[int]


_FLIPPED = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}


def analyze_canonical_loop(loop: For) -> CanonicalLoop:
    """
    检查 for 循环是否为规范循环

    Args:
        loop: for 语句

    Returns:
        CanonicalLoop

    Raises:
        NonCanonicalLoopError: 循环不是规范形式
    """
    def fail(reason: str):
        raise NonCanonicalLoopError(f"非规范循环: {reason}", loop.pos)

    init = loop.init
    if isinstance(init, Decl) and init.init is not None:
        if init.ctype != "int":
            fail(f"归纳变量 {init.name} 必须是 int")
        var, lower = init.name, init.init
    elif isinstance(init, Assign) and isinstance(init.target, Ident):
        var, lower = init.target.name, init.value
    else:
        fail("初始化部分必须给单个归纳变量赋初值")

    cond = loop.cond
    if not (isinstance(cond, BinOp) and cond.op in _FLIPPED):
        fail("条件必须是 <、<=、> 或 >= 比较")
    if cond.lhs == Ident(var):
        op, bound = cond.op, cond.rhs
    elif cond.rhs == Ident(var):
        op, bound = _FLIPPED[cond.op], cond.lhs
    else:
        fail(f"条件必须直接比较归纳变量 {var}")
    if var in set(expr_symbols(bound)) or _has_float(bound):
        fail("循环边界必须是与归纳变量无关的整数表达式")

    update = loop.update
    if update.var != var or update.op not in ("+", "-"):
        fail(f"增量部分必须是 {var} += 常量或不变量")
    if var in set(expr_symbols(update.amount)) or _has_float(update.amount):
        fail("步长必须是与归纳变量无关的整数表达式")

    written = assigned_names(loop.body)
    if var in written:
        fail(f"循环体修改了归纳变量 {var}")
    varying = (set(expr_symbols(bound)) | set(expr_symbols(update.amount))
               | set(expr_symbols(lower))) & written
    if varying:
        fail(f"循环边界或步长在循环体中被修改: {', '.join(sorted(varying))}")

    step = update.amount if update.op == "+" else _negate(update.amount)
    step_value = const_value(step)
    if step_value is not None:
        if step_value == 0:
            fail("步长不能为 0")
        if op in ("<", "<=") and step_value < 0 or op in (">", ">=") and step_value > 0:
            fail("步长方向与循环条件不一致")
    return CanonicalLoop(var, lower, op, bound, step, step_value)


def perfect_nest(loop: For, depth: int) -> List[For]:
    """取出以 loop 为根、深度为 depth 的完美嵌套循环，不足时抛出 NonCanonicalLoopError"""
    nest = [loop]
    current = loop
    while len(nest) < depth:
        body = current.body
        if isinstance(body, Block) and len(body.stmts) == 1:
            body = body.stmts[0]
        if not isinstance(body, For):
            raise NonCanonicalLoopError(
                f"collapse({depth}) 超过了完美嵌套循环的深度 {len(nest)}", loop.pos
            )
        nest.append(body)
        current = body
    return nest


def _negate(expr):
    if isinstance(expr, IntLit):
        return IntLit(-expr.value)
    return Neg(expr)


def _has_float(expr) -> bool:
    if isinstance(expr, FloatLit):
        return True
    if isinstance(expr, BinOp):
        return _has_float(expr.lhs) or _has_float(expr.rhs)
    if isinstance(expr, Neg):
        return _has_float(expr.operand)
    return False


# ---- 作用域与类型 ----

class _Scope:
    def __init__(self, parent: Optional["_Scope"] = None):
        self.parent = parent
        self.names: Dict[str, Tuple[str, int]] = {}

    def child(self) -> "_Scope":
        return _Scope(self)

    def declare(self, name: str, ctype: str, ndims: int, pos) -> None:
        if name in self.names:
            raise SemanticError(f"重复声明: {name}", pos)
        self.names[name] = (ctype, ndims)

    def lookup(self, name: str) -> Optional[Tuple[str, int]]:
        scope = self
        while scope is not None:
            if name in scope.names:
                return scope.names[name]
            scope = scope.parent
        return None


class _Resolver:
    """附着指令并检查标识符与类型"""

    def __init__(self, functions: List[Function]):
        self.functions: Dict[str, Function] = {}
        for fn in functions:
            if fn.name in self.functions:
                raise SemanticError(f"重复定义的函数: {fn.name}", fn.pos)
            self.functions[fn.name] = fn

    def resolve(self) -> List[Function]:
        return [self.function(fn) for fn in self.functions.values()]

    def function(self, fn: Function) -> Function:
        scope = _Scope()
        for param in fn.params:
            if param.ctype == "void":
                raise SemanticError(f"参数 {param.name} 不能是 void", fn.pos)
            if len(param.dims) > 2:
                raise SemanticError(f"数组参数 {param.name} 最多两维", fn.pos)
            scope.declare(param.name, param.ctype, len(param.dims), fn.pos)
        for param in fn.params:
            for extent in param.dims:
                if extent is not None and self.type_of(extent, scope) != "int":
                    raise SemanticError(f"数组参数 {param.name} 的维度必须是整数表达式", fn.pos)

        self.current = fn
        body = rewrite_cuda_builtins(fn.body) if fn.is_kernel else fn.body
        stmts = self.statements(body.stmts, scope.child())
        logger.debug(f"函数 {fn.name} 解析完成，共 {len(stmts)} 条顶层语句")
        return Function(fn.name, fn.return_type, fn.params, Block(tuple(stmts), pos=body.pos),
                        fn.is_kernel, pos=fn.pos)

    # ---- 语句 ----

    def statements(self, stmts, scope: _Scope) -> list:
        out = []
        index = 0
        while index < len(stmts):
            stmt = stmts[index]
            if isinstance(stmt, PragmaLine):
                directive = self.directive(stmt)
                if directive is None:
                    index += 1
                    continue
                if is_standalone(directive):
                    self.check_clause_symbols(directive, scope, set())
                    out.append(DirectiveStmt(directive, pos=stmt.pos))
                    index += 1
                    continue
                annotated, index = self.attach(stmts, index + 1, directive, scope)
                out.append(annotated)
                continue
            out.append(self.statement(stmt, scope))
            index += 1
        return out

    def attach(self, stmts, index: int, directive: Directive, scope: _Scope):
        text = format_directive(directive)
        if index >= len(stmts):
            raise AttachError(f"指令 {text} 后面没有可附着的语句", directive.pos)
        nxt = stmts[index]
        if isinstance(nxt, PragmaLine):
            inner = self.directive(nxt)
            if inner is None:
                return self.attach(stmts, index + 1, directive, scope)
            if is_standalone(inner):
                raise AttachError(f"指令 {text} 不能附着在独立指令上", directive.pos)
            if is_loop_directive(directive):
                raise AttachError(f"循环指令 {text} 必须附着在 for 循环上", directive.pos)
            stmt, following = self.attach(stmts, index + 1, inner, scope)
        else:
            if isinstance(nxt, (Decl, Return)):
                raise AttachError(f"指令 {text} 不能附着在声明或 return 语句上", directive.pos)
            stmt, following = self.statement(nxt, scope), index + 1
        self.check_attach(directive, stmt, scope)
        return Annotated(directive, stmt, pos=directive.pos), following

    def check_attach(self, directive: Directive, stmt, scope: _Scope) -> None:
        text = format_directive(directive)
        extra: Set[str] = set()
        if is_loop_directive(directive):
            if not isinstance(stmt, For):
                raise AttachError(f"循环指令 {text} 必须附着在 for 循环上", directive.pos)
            collapse = directive.clause("collapse")
            depth = collapse.args[0].value if collapse is not None else 1
            nest_scope = scope
            for loop in perfect_nest(stmt, depth):
                nest_scope = self.check_canonical(loop, nest_scope)
            if isinstance(stmt.init, Decl):
                extra.add(stmt.init.name)
        elif directive.has("atomic") and not isinstance(stmt, Assign):
            raise AttachError("atomic 指令必须附着在赋值语句上", directive.pos)
        self.check_clause_symbols(directive, scope, extra)

    def check_canonical(self, loop: For, scope: _Scope) -> _Scope:
        """检查规范循环，返回声明了归纳变量的作用域，供内层循环的边界使用"""
        canonical = analyze_canonical_loop(loop)
        inner = scope.child()
        if isinstance(loop.init, Decl):
            inner.declare(loop.init.name, loop.init.ctype, 0, loop.pos)
        info = inner.lookup(canonical.var)
        if info is None or info != ("int", 0):
            raise NonCanonicalLoopError(f"归纳变量 {canonical.var} 必须是 int", loop.pos)
        for expr in (canonical.lower, canonical.bound, loop.update.amount):
            if self.type_of(expr, inner) != "int":
                raise NonCanonicalLoopError("循环边界和步长必须是整数表达式", loop.pos)
        return inner

    def check_clause_symbols(self, directive: Directive, scope: _Scope, extra: Set[str]) -> None:
        for clause in directive.clauses:
            if clause.extension:
                continue
            if clause.name in ("critical",):
                continue
            if clause.name == "schedule" or clause.name == "dist_schedule":
                args = clause.args[1:]
            else:
                args = clause.args
            for arg in args:
                for name in expr_symbols(arg):
                    if name not in extra and scope.lookup(name) is None:
                        raise SemanticError(f"子句 {clause.name} 引用了未声明的标识符: {name}",
                                            directive.pos)

    def statement(self, stmt, scope: _Scope):
        if isinstance(stmt, Decl):
            if stmt.ctype == "void":
                raise SemanticError(f"变量 {stmt.name} 不能是 void", stmt.pos)
            if stmt.init is not None:
                self.type_of(stmt.init, scope)
            scope.declare(stmt.name, stmt.ctype, 0, stmt.pos)
            return stmt
        if isinstance(stmt, Assign):
            self.type_of(stmt.target, scope)
            self.type_of(stmt.value, scope)
            return stmt
        if isinstance(stmt, For):
            inner = scope.child()
            init = self.statement(stmt.init, inner)
            self.type_of(stmt.cond, inner)
            if inner.lookup(stmt.update.var) is None:
                raise SemanticError(f"未声明的标识符: {stmt.update.var}", stmt.pos)
            self.type_of(stmt.update.amount, inner)
            body = self.body(stmt.body, inner)
            return For(init, stmt.cond, stmt.update, body, pos=stmt.pos)
        if isinstance(stmt, If):
            self.type_of(stmt.cond, scope)
            then = self.body(stmt.then, scope)
            orelse = self.body(stmt.orelse, scope) if stmt.orelse is not None else None
            return If(stmt.cond, then, orelse, pos=stmt.pos)
        if isinstance(stmt, Block):
            return Block(tuple(self.statements(stmt.stmts, scope.child())), pos=stmt.pos)
        if isinstance(stmt, Call):
            return self.call(stmt, scope)
        if isinstance(stmt, Return):
            if stmt.value is not None:
                if self.current.return_type == "void":
                    raise SemanticError(f"void 函数 {self.current.name} 不能返回值", stmt.pos)
                self.type_of(stmt.value, scope)
            return stmt
        if isinstance(stmt, PragmaLine):
            raise AttachError(f"指令 {stmt.text} 后面没有可附着的语句", stmt.pos)
        raise KernelSyntaxError(f"未知语句: {type(stmt).__name__}", getattr(stmt, "pos", None))

    def body(self, stmt, scope: _Scope):
        if isinstance(stmt, Block):
            return Block(tuple(self.statements(stmt.stmts, scope.child())), pos=stmt.pos)
        return Block(tuple(self.statements([stmt], scope.child())), pos=getattr(stmt, "pos", None))

    def call(self, stmt: Call, scope: _Scope):
        for arg in stmt.args:
            if isinstance(arg, Ident):
                if scope.lookup(arg.name) is None:
                    raise SemanticError(f"未声明的标识符: {arg.name}", arg.pos)
            else:
                self.type_of(arg, scope)
        if stmt.launch is not None:
            directive = recognize_cuda_launch(stmt, self.functions, lambda e: self.type_of(e, scope))
            return Annotated(directive, stmt, pos=stmt.pos)
        callee = self.functions.get(stmt.name)
        if callee is not None:
            if len(callee.params) != len(stmt.args):
                raise SemanticError(
                    f"函数 {stmt.name} 需要 {len(callee.params)} 个参数，实际传入 {len(stmt.args)} 个",
                    stmt.pos
                )
        return stmt

    def directive(self, line: PragmaLine) -> Optional[Directive]:
        match = _PRAGMA_LANGUAGE.match(line.text)
        if match is None or match.group(1) not in LANGUAGES:
            logger.warning(f"{line.pos}: 忽略无法识别的 pragma: {line.text}")
            return None
        return parse_directive(line.text, line.pos)

    # ---- 表达式类型 ----

    def type_of(self, expr, scope: _Scope) -> str:
        if isinstance(expr, IntLit):
            return "int"
        if isinstance(expr, FloatLit):
            return "double"
        if isinstance(expr, Ident):
            info = scope.lookup(expr.name)
            if info is None:
                raise SemanticError(f"未声明的标识符: {expr.name}", expr.pos)
            if info[1] > 0:
                raise SemanticError(f"数组 {expr.name} 不能作为标量使用", expr.pos)
            return info[0]
        if isinstance(expr, Index):
            info = scope.lookup(expr.name)
            if info is None:
                raise SemanticError(f"未声明的标识符: {expr.name}", expr.pos)
            if info[1] != len(expr.indices):
                raise SemanticError(
                    f"数组 {expr.name} 是 {info[1]} 维的，但使用了 {len(expr.indices)} 个下标", expr.pos
                )
            for sub in expr.indices:
                if isinstance(sub, ArraySection):
                    raise SemanticError(f"数组段只能出现在指令子句中: {expr.name}", expr.pos)
                if self.type_of(sub, scope) != "int":
                    raise SemanticError(f"数组 {expr.name} 的下标必须是整数", expr.pos)
            return info[0]
        if isinstance(expr, BinOp):
            lhs, rhs = self.type_of(expr.lhs, scope), self.type_of(expr.rhs, scope)
            if expr.op in ("<", "<=", ">", ">=", "==", "!="):
                return "int"
            if expr.op == "%" and (lhs != "int" or rhs != "int"):
                raise SemanticError("% 运算的操作数必须是整数", expr.pos)
            return lhs if _TYPE_RANK[lhs] >= _TYPE_RANK[rhs] else rhs
        if isinstance(expr, Neg):
            return self.type_of(expr.operand, scope)
        if isinstance(expr, Intrinsic):
            return "int"
        if isinstance(expr, CudaBuiltin):
            raise SemanticError(f"CUDA 内建变量 {expr.name} 只能在 __global__ 内核中使用", expr.pos)
        raise SemanticError(f"未知表达式: {type(expr).__name__}", getattr(expr, "pos", None))


def parse_kernel_source(text: str, file: str = "<input>") -> Program:
    """
    解析内核语言源码

    Args:
        text: 源码文本
        file: 文件名，用于诊断信息

    Returns:
        附着了指令的 Program
    """
    base = SourcePosition(file, 1, 1)
    try:
        tree = _PARSER.parse(text)
        functions = _KernelBuilder(base).transform(tree)
        program = Program(tuple(_Resolver(functions).resolve()), file=file)
    except UnexpectedCharacters as e:
        raise KernelSyntaxError(f"无法识别的字符 {text[e.pos_in_stream]!r}",
                                SourcePosition(file, e.line, e.column))
    except UnexpectedEOF as e:
        raise KernelSyntaxError("文件意外结束", SourcePosition(file, max(e.line, 1), max(e.column, 1)))
    except UnexpectedInput as e:
        token = getattr(e, "token", None)
        shown = f" {str(token)!r}" if token is not None else ""
        raise KernelSyntaxError(f"语法错误，意外的记号{shown}", SourcePosition(file, e.line, e.column))
    except VisitError as e:
        if isinstance(e.orig_exc, FrontendError):
            raise e.orig_exc.with_file(file)
        raise
    except FrontendError as e:
        raise e.with_file(file)

    logger.info(f"解析 {file}: {len(program.functions)} 个函数，"
                f"{sum(1 for _ in program.directives())} 条指令")
    return program
