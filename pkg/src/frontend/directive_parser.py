"""
OpenMP / OpenACC 指令解析
"""

import logging
from typing import Dict, FrozenSet, List, Optional, Tuple

from lark import Lark, Token, v_args
from lark.exceptions import UnexpectedInput, VisitError

from ..utils.errors import DirectiveError, FrontendError, SourcePosition
from .ast_nodes import ArraySection, Clause, Directive, Ident, Index, IntLit
from .c_printer import format_directive
from .expr_builder import ExprBuilder
from .grammar import DIRECTIVE_GRAMMAR

logger = logging.getLogger(__name__)

_PARSER = Lark(DIRECTIVE_GRAMMAR, parser="lalr", propagate_positions=True)

LANGUAGES = {"omp": "openmp", "acc": "openacc"}

# 合法的组合构造，从外到内
OMP_COMBINATIONS: Tuple[Tuple[str, ...], ...] = (
    ("target",), ("target", "data"), ("target", "update"),
    ("target", "teams"), ("target", "teams", "distribute"),
    ("target", "teams", "distribute", "simd"),
    ("target", "teams", "distribute", "parallel", "for"),
    ("target", "teams", "distribute", "parallel", "for", "simd"),
    ("target", "parallel"), ("target", "parallel", "for"),
    ("target", "parallel", "for", "simd"),
    ("teams",), ("teams", "distribute"), ("teams", "distribute", "simd"),
    ("teams", "distribute", "parallel", "for"),
    ("teams", "distribute", "parallel", "for", "simd"),
    ("distribute",), ("distribute", "simd"),
    ("distribute", "parallel", "for"), ("distribute", "parallel", "for", "simd"),
    ("parallel",), ("parallel", "for"), ("parallel", "for", "simd"),
    ("for",), ("for", "simd"), ("simd",),
    ("task",), ("taskloop",), ("taskwait",), ("barrier",),
    ("critical",), ("atomic",), ("single",),
)

ACC_COMBINATIONS: Tuple[Tuple[str, ...], ...] = (
    ("parallel",), ("parallel", "loop"), ("loop",), ("data",), ("update",), ("wait",),
)

OMP_CLAUSES: Dict[str, FrozenSet[str]] = {
    "target": frozenset({"map", "device", "depend", "nowait", "private", "firstprivate", "allocate"}),
    "teams": frozenset({"num_teams", "thread_limit", "shared", "private", "firstprivate", "reduction", "allocate"}),
    "distribute": frozenset({"private", "firstprivate", "lastprivate", "collapse", "dist_schedule"}),
    "parallel": frozenset({"num_threads", "shared", "private", "firstprivate", "reduction", "allocate"}),
    "for": frozenset({"schedule", "collapse", "private", "firstprivate", "lastprivate", "reduction",
                      "nowait"}),
    "simd": frozenset({"simdlen", "collapse", "private", "lastprivate", "reduction"}),
    "task": frozenset({"depend", "shared", "private", "firstprivate", "allocate"}),
    "taskloop": frozenset({"grainsize", "num_tasks", "collapse", "shared", "private", "firstprivate",
                           "lastprivate", "reduction"}),
    "taskwait": frozenset({"depend"}),
    "barrier": frozenset(),
    "critical": frozenset(),
    "atomic": frozenset(),
    "single": frozenset({"private", "firstprivate", "nowait"}),
    "data": frozenset({"map", "device"}),
    "update": frozenset({"to", "from", "device", "depend", "nowait"}),
}

ACC_CLAUSES: Dict[str, FrozenSet[str]] = {
    "parallel": frozenset({"num_gangs", "num_workers", "vector_length", "copyin", "copyout", "copy",
                           "create", "private", "firstprivate", "reduction", "async", "wait"}),
    "loop": frozenset({"gang", "worker", "vector", "seq", "independent", "collapse", "private",
                       "reduction"}),
    "data": frozenset({"copyin", "copyout", "copy", "create"}),
    "update": frozenset({"host", "self", "device", "async", "wait"}),
    "wait": frozenset({"async"}),
}

# target data / target update 只接受后一个构造的子句
_OVERRIDES = {("target", "data"): "data", ("target", "update"): "update"}

EXCLUSIVE_CLAUSES = frozenset({
    "schedule", "num_threads", "num_teams", "thread_limit", "collapse", "simdlen", "grainsize", "num_tasks",
    "num_gangs", "num_workers", "vector_length", "device", "dist_schedule", "nowait", "async",
})

_NO_ARGUMENT = frozenset({"nowait", "gang", "worker", "vector", "seq", "independent"})
_ONE_EXPRESSION = frozenset({"num_threads", "num_teams", "thread_limit", "collapse", "simdlen", "grainsize",
                             "num_tasks", "num_gangs", "num_workers", "vector_length"})
_VARIABLE_LIST = frozenset({"private", "shared", "firstprivate", "lastprivate", "copyin", "copyout",
                            "copy", "create", "host", "self", "to", "from"})
_MODIFIERS = {
    "map": (False, frozenset({"to", "from", "tofrom", "alloc"})),
    "reduction": (True, frozenset({"+", "-", "*", "max", "min"})),
    "depend": (True, frozenset({"in", "out", "inout"})),
    "allocate": (False, None),
}
SCHEDULE_POLICIES = ("static", "dynamic", "guided", "runtime", "auto")

STANDALONE = {
    "openmp": (("barrier",), ("taskwait",), ("target", "update")),
    "openacc": (("update",), ("wait",)),
}
LOOP_CONSTRUCTS = {
    "openmp": frozenset({"for", "distribute", "simd", "taskloop"}),
    "openacc": frozenset({"loop"}),
}
# 构造本身可带参数：critical(name)、wait(expr, ...)
_CONSTRUCT_ARGUMENTS = frozenset({"critical", "wait"})


class _RawItem:
    __slots__ = ("name", "has_parens", "modifier", "args", "raw", "position")

    def __init__(self, name, has_parens, modifier, args, raw, position):
        self.name = name
        self.has_parens = has_parens
        self.modifier = modifier
        self.args = args
        self.raw = raw
        self.position = position


@v_args(meta=True)
class _DirectiveBuilder(ExprBuilder):
    def __init__(self, text: str, base: Optional[SourcePosition]):
        super().__init__(base)
        self.text = text

    def start(self, meta, children):
        return str(children[1]), children[1], list(children[2:])

    def bare_item(self, meta, children):
        return _RawItem(str(children[0]), False, None, (), "", self.token_position(children[0]))

    def paren_item(self, meta, children):
        name = children[0]
        modifier, args, raw = children[1]
        return _RawItem(str(name), True, modifier, args, raw, self.token_position(name))

    def clause_args(self, meta, children):
        raw = self.text[meta.start_pos:meta.end_pos]
        return children[0], tuple(children[1:]), raw

    def mod_name(self, meta, children):
        return str(children[0])

    def mod_plus(self, meta, children):
        return "+"

    def mod_minus(self, meta, children):
        return "-"

    def mod_times(self, meta, children):
        return "*"


def parse_directive(text: str, position: Optional[SourcePosition] = None) -> Directive:
    """
    解析一行 #pragma omp / #pragma acc 指令

    Args:
        text: pragma 行原文
        position: pragma 在源文件中的位置

    Returns:
        Directive 记录
    """
    text = text.strip()
    try:
        tree = _PARSER.parse(text)
        language_word, language_token, items = _DirectiveBuilder(text, position).transform(tree)
    except UnexpectedInput as e:
        raise DirectiveError(f"指令语法错误: {text}", _offset(position, e.line, e.column))
    except VisitError as e:
        if isinstance(e.orig_exc, FrontendError):
            raise e.orig_exc
        raise

    if language_word not in LANGUAGES:
        raise DirectiveError(f"未知的指令语言: {language_word}", _token_pos(position, language_token))
    language = LANGUAGES[language_word]
    constructs, construct_items, rest = _split_constructs(language, items, position)
    clauses = [_construct_clause(item) for item in construct_items]
    clauses.extend(_build_clauses(language, constructs, rest))

    directive = Directive(language, constructs, tuple(clauses), pos=position)
    logger.debug(f"解析指令: {format_directive(directive)}")
    return directive


def parse_omp_directive(text: str, position: Optional[SourcePosition] = None) -> Directive:
    """解析 OpenMP 指令，要求以 #pragma omp 开头"""
    directive = parse_directive(text, position)
    if directive.language != "openmp":
        raise DirectiveError(f"不是 OpenMP 指令: {text.strip()}", position)
    return directive


def parse_acc_directive(text: str, position: Optional[SourcePosition] = None) -> Directive:
    """解析 OpenACC 指令，要求以 #pragma acc 开头"""
    directive = parse_directive(text, position)
    if directive.language != "openacc":
        raise DirectiveError(f"不是 OpenACC 指令: {text.strip()}", position)
    return directive


def render_directive(directive: Directive) -> str:
    """把 Directive 渲染成规范文本"""
    return format_directive(directive)


def is_standalone(directive: Directive) -> bool:
    return directive.constructs in STANDALONE.get(directive.language, ())


def is_loop_directive(directive: Directive) -> bool:
    if directive.language == "cuda-launch":
        return False
    return directive.constructs[-1] in LOOP_CONSTRUCTS[directive.language]


def _offset(base: Optional[SourcePosition], line: int, column: int) -> SourcePosition:
    if base is None:
        return SourcePosition(line=line, column=column)
    return SourcePosition(base.file, base.line, base.column + max(column, 1) - 1)


def _token_pos(base: Optional[SourcePosition], token: Token) -> SourcePosition:
    return _offset(base, token.line, token.column)


def _split_constructs(language: str, items: List[_RawItem], base):
    combinations = OMP_COMBINATIONS if language == "openmp" else ACC_COMBINATIONS
    sequence: Tuple[str, ...] = ()
    construct_items = []
    index = 0
    while index < len(items):
        candidate = sequence + (items[index].name,)
        if not any(combo[:len(candidate)] == candidate for combo in combinations):
            break
        item = items[index]
        if item.has_parens and item.name not in _CONSTRUCT_ARGUMENTS:
            raise DirectiveError(f"构造 {item.name} 不接受参数", item.position)
        sequence = candidate
        if item.has_parens:
            construct_items.append(item)
        index += 1

    if not sequence:
        first = items[0].name if items else ""
        raise DirectiveError(f"未知构造: {first}", items[0].position if items else base)
    if sequence not in combinations:
        raise DirectiveError(f"不完整的组合构造: {' '.join(sequence)}", items[index - 1].position)
    return sequence, construct_items, items[index:]


def _construct_clause(item: _RawItem) -> Clause:
    if item.modifier is not None:
        raise DirectiveError(f"构造 {item.name} 的参数不接受修饰符", item.position)
    if item.name == "critical":
        if len(item.args) != 1 or not isinstance(item.args[0], Ident):
            raise DirectiveError("critical 的参数必须是一个名字", item.position)
    return Clause(item.name, None, item.args, True)


def _allowed_clauses(language: str, constructs: Tuple[str, ...]) -> FrozenSet[str]:
    table = OMP_CLAUSES if language == "openmp" else ACC_CLAUSES
    if constructs in _OVERRIDES:
        return table[_OVERRIDES[constructs]]
    allowed = frozenset()
    for construct in constructs:
        allowed |= table[construct]
    return allowed


def _build_clauses(language: str, constructs: Tuple[str, ...], items: List[_RawItem]) -> List[Clause]:
    allowed = _allowed_clauses(language, constructs)
    seen = set()
    clauses = []
    for item in items:
        if item.name not in allowed:
            logger.warning(f"{item.position}: 子句 {item.name} 不受支持，作为扩展子句保留")
            clauses.append(Clause(item.name, None, (), item.has_parens, True, item.raw))
            continue
        if item.name in EXCLUSIVE_CLAUSES and item.name in seen:
            raise DirectiveError(f"子句 {item.name} 重复出现", item.position)
        seen.add(item.name)
        clauses.append(_check_clause(language, item))
    return clauses


def _check_clause(language: str, item: _RawItem) -> Clause:
    name = item.name
    if name in _NO_ARGUMENT:
        if item.has_parens:
            raise DirectiveError(f"子句 {name} 不接受参数", item.position)
        return Clause(name)

    if name in ("async", "wait"):
        if item.modifier is not None or (name == "async" and len(item.args) > 1):
            raise DirectiveError(f"子句 {name} 的参数格式错误", item.position)
        return Clause(name, None, item.args, item.has_parens)

    if not item.has_parens:
        raise DirectiveError(f"子句 {name} 缺少参数", item.position)

    if name in _ONE_EXPRESSION or (name == "device" and language == "openmp"):
        if item.modifier is not None or len(item.args) != 1 or _has_section(item.args[0]):
            raise DirectiveError(f"子句 {name} 需要一个整数表达式", item.position)
        if name == "collapse" and (not isinstance(item.args[0], IntLit) or item.args[0].value < 1):
            raise DirectiveError("collapse 的参数必须是正整数常量", item.position)
        return Clause(name, None, item.args, True)

    if name in ("schedule", "dist_schedule"):
        return _check_schedule(item)

    if name in _MODIFIERS:
        required, choices = _MODIFIERS[name]
        if item.modifier is None and required:
            raise DirectiveError(f"子句 {name} 缺少修饰符", item.position)
        if item.modifier is not None and choices is not None and item.modifier not in choices:
            raise DirectiveError(f"子句 {name} 的修饰符 {item.modifier} 不合法", item.position)
        _check_variables(name, item)
        return Clause(name, item.modifier, item.args, True)

    if name in _VARIABLE_LIST or name == "device":
        if item.modifier is not None:
            raise DirectiveError(f"子句 {name} 不接受修饰符", item.position)
        _check_variables(name, item)
        return Clause(name, None, item.args, True)

    raise DirectiveError(f"子句 {name} 的参数格式错误", item.position)


def _check_schedule(item: _RawItem) -> Clause:
    args = item.args
    if item.modifier is not None or not 1 <= len(args) <= 2 or not isinstance(args[0], Ident):
        raise DirectiveError(f"子句 {item.name} 的参数格式错误", item.position)
    policies = ("static",) if item.name == "dist_schedule" else SCHEDULE_POLICIES
    if args[0].name not in policies:
        raise DirectiveError(f"未知调度策略: {args[0].name}", item.position)
    if len(args) == 2 and _has_section(args[1]):
        raise DirectiveError(f"子句 {item.name} 的块大小必须是整数表达式", item.position)
    return Clause(item.name, None, args, True)


def _check_variables(name: str, item: _RawItem) -> None:
    for arg in item.args:
        if isinstance(arg, Ident):
            continue
        if isinstance(arg, Index) and all(isinstance(i, ArraySection) for i in arg.indices):
            continue
        raise DirectiveError(f"子句 {name} 需要变量列表（可带数组段）", item.position)


def _has_section(expr) -> bool:
    return isinstance(expr, Index) and expr.is_section
