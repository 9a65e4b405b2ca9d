"""
内核语言源码打印
"""

from typing import List, Optional

from .ast_nodes import (
    Annotated, ArraySection, Assign, BinOp, Block, Call, CudaBuiltin, Decl, Directive,
    DirectiveStmt, FloatLit, For, Ident, If, Index, Intrinsic, IntLit, Neg, Param, PragmaLine,
    Return
)

_PRECEDENCE = {
    "<": 1, "<=": 1, ">": 1, ">=": 1, "==": 1, "!=": 1,
    "+": 2, "-": 2,
    "*": 3, "/": 3, "%": 3,
}
_UNARY = 4


def format_float(value: float) -> str:
    text = repr(float(value))
    if "e" not in text and "." not in text:
        text += ".0"
    return text


def format_expr(expr, parent: int = 0) -> str:
    """
    以 C 语法打印表达式，按优先级加最少的括号

    Args:
        expr: 表达式
        parent: 外层运算符的优先级

    Returns:
        表达式文本
    """
    if isinstance(expr, IntLit):
        text = str(expr.value)
        return f"({text})" if expr.value < 0 and parent >= _UNARY else text
    if isinstance(expr, FloatLit):
        text = format_float(expr.value)
        return f"({text})" if expr.value < 0 and parent >= _UNARY else text
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Index):
        return expr.name + "".join(_format_subscript(i) for i in expr.indices)
    if isinstance(expr, Intrinsic):
        return f"{expr.name}()"
    if isinstance(expr, CudaBuiltin):
        return expr.name
    if isinstance(expr, Neg):
        return "-" + format_expr(expr.operand, _UNARY)
    if isinstance(expr, BinOp):
        prec = _PRECEDENCE[expr.op]
        # 左结合：右操作数同级时需要括号
        text = f"{format_expr(expr.lhs, prec)} {expr.op} {format_expr(expr.rhs, prec + 1)}"
        return f"({text})" if prec < parent else text
    raise TypeError(f"未知表达式类型: {type(expr).__name__}")


def _format_subscript(sub) -> str:
    if isinstance(sub, ArraySection):
        parts = [format_expr(sub.lower) if sub.lower is not None else "",
                 format_expr(sub.length) if sub.length is not None else ""]
        if sub.stride is not None:
            parts.append(format_expr(sub.stride))
        return "[" + ":".join(parts) + "]"
    return f"[{format_expr(sub)}]"


def format_clause_args(clause) -> str:
    if clause.extension:
        return clause.raw
    args = ", ".join(format_expr(a) for a in clause.args)
    if clause.modifier is not None:
        return f"{clause.modifier}: {args}"
    return args


def format_directive(directive: Directive) -> str:
    """
    规范形式的指令文本，重新解析后得到相等的 Directive

    Args:
        directive: 指令

    Returns:
        #pragma 行
    """
    if directive.language == "cuda-launch":
        grid, block = directive.launch_config
        return f"<<<{format_expr(grid)}, {format_expr(block)}>>>"
    prefix = "omp" if directive.language == "openmp" else "acc"
    words: List[str] = []
    construct_args = {c.name: c for c in directive.clauses if c.name in directive.constructs}
    for construct in directive.constructs:
        arg = construct_args.get(construct)
        if arg is not None and arg.has_parens:
            words.append(f"{construct}({format_clause_args(arg)})")
        else:
            words.append(construct)
    for clause in directive.clauses:
        if clause.name in directive.constructs:
            continue
        if clause.has_parens:
            words.append(f"{clause.name}({format_clause_args(clause)})")
        else:
            words.append(clause.name)
    return f"#pragma {prefix} " + " ".join(words)


def format_param(param: Param) -> str:
    if not param.dims:
        return f"{param.ctype} {param.name}"
    if len(param.dims) == 1 and param.dims[0] is None:
        return f"{param.ctype}* {param.name}"
    dims = "".join(f"[{format_expr(d)}]" if d is not None else "[]" for d in param.dims)
    return f"{param.ctype} {param.name}{dims}"


def format_stmt(stmt, indent: int = 1) -> List[str]:
    """把语句打印成若干行，四空格缩进"""
    pad = "    " * indent
    if isinstance(stmt, Decl):
        init = f" = {format_expr(stmt.init)}" if stmt.init is not None else ""
        return [f"{pad}{stmt.ctype} {stmt.name}{init};"]
    if isinstance(stmt, Assign):
        return [f"{pad}{format_expr(stmt.target)} = {format_expr(stmt.value)};"]
    if isinstance(stmt, Call):
        args = ", ".join(format_expr(a) for a in stmt.args)
        if stmt.launch is not None:
            grid, block = stmt.launch
            return [f"{pad}{stmt.name}<<<{format_expr(grid)}, {format_expr(block)}>>>({args});"]
        return [f"{pad}{stmt.name}({args});"]
    if isinstance(stmt, Return):
        if stmt.value is None:
            return [f"{pad}return;"]
        return [f"{pad}return {format_expr(stmt.value)};"]
    if isinstance(stmt, Block):
        lines = [f"{pad}{{"]
        for s in stmt.stmts:
            lines.extend(format_stmt(s, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if isinstance(stmt, If):
        lines = [f"{pad}if ({format_expr(stmt.cond)})"]
        lines.extend(_format_body(stmt.then, indent))
        if stmt.orelse is not None:
            lines.append(f"{pad}else")
            lines.extend(_format_body(stmt.orelse, indent))
        return lines
    if isinstance(stmt, For):
        return [f"{pad}for ({format_for_header(stmt)})"] + _format_body(stmt.body, indent)
    if isinstance(stmt, Annotated):
        return [pad + format_directive(stmt.directive)] + format_stmt(stmt.stmt, indent)
    if isinstance(stmt, DirectiveStmt):
        return [pad + format_directive(stmt.directive)]
    if isinstance(stmt, PragmaLine):
        return [pad + stmt.text]
    raise TypeError(f"未知语句类型: {type(stmt).__name__}")


def _format_body(stmt, indent: int) -> List[str]:
    if isinstance(stmt, Block):
        return format_stmt(stmt, indent)
    return format_stmt(stmt, indent + 1)


def format_for_header(stmt: For) -> str:
    init = stmt.init
    if isinstance(init, Decl):
        init_text = f"{init.ctype} {init.name} = {format_expr(init.init)}"
    else:
        init_text = f"{format_expr(init.target)} = {format_expr(init.value)}"
    upd = stmt.update
    if upd.op in ("+", "-") and upd.amount == IntLit(1):
        upd_text = f"{upd.var}++" if upd.op == "+" else f"{upd.var}--"
    elif upd.op == "=":
        upd_text = f"{upd.var} = {format_expr(upd.amount)}"
    else:
        upd_text = f"{upd.var} {upd.op}= {format_expr(upd.amount)}"
    return f"{init_text}; {format_expr(stmt.cond)}; {upd_text}"


def format_function_header(name: str, return_type: str, params, is_kernel: bool) -> str:
    prefix = "__global__ " if is_kernel else ""
    joined = ", ".join(format_param(p) for p in params)
    return f"{prefix}{return_type} {name}({joined})"


def format_optional(expr: Optional[object]) -> str:
    return "" if expr is None else format_expr(expr)


def format_program(functions) -> str:
    """打印整个程序，函数之间空一行"""
    chunks = []
    for fn in functions:
        lines = [format_function_header(fn.name, fn.return_type, fn.params, fn.is_kernel) + " {"]
        for stmt in fn.body.stmts:
            lines.extend(format_stmt(stmt, 1))
        lines.append("}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + ("\n" if chunks else "")
