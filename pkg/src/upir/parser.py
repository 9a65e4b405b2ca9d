"""
UPIR 文本解析

字段顺序可以任意，解析后统一规范化；`#N` 标签在整个模块内解析。
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedInput, VisitError

from ..frontend.ast_nodes import (
    ARITH_OPS, COMPARE_OPS, INTRINSICS, ArraySection, BinOp, FloatLit, Ident, Index, Intrinsic,
    IntLit, Neg
)
from ..utils.errors import SourcePosition, UpirSyntaxError
from .grammar import UPIR_GRAMMAR
from .nodes import (
    ACCESS_MODES, ALLOCATORS, DEALLOCATORS, DEPEND_MODES, DEVICES, DISTRIBUTION_PATTERNS,
    ELEMENT_TYPES, MAPPING_PROPERTIES, MOVEMENT_DIRECTIONS, REDUCTION_OPERATIONS,
    SCHEDULE_POLICIES, SHARING_PROPERTIES, SPMD_TARGETS, SYNC_NAMES, SYNC_STEPS, SYNC_UNIT_KINDS,
    TASK_POLICIES, VISIBILITIES, AssignNode, Attribute, CallNode, DataItem, DataMovementNode,
    DataRegionNode, DataUpdateNode, DeclNode, Depend, Distribution, ExtensionNode, IfNode,
    LoopNode, LoopParallel, MmAllocNode, MmDeallocNode, ReturnNode, SpmdNode, SyncNode, SyncUnit,
    TaskNode, UpirFunction, UpirModule, UpirParam
)
from .traversal import canonicalize, references, walk
from .validator import check_upir

logger = logging.getLogger(__name__)

_PARSER = Lark(UPIR_GRAMMAR, parser="lalr", propagate_positions=True)

_SCALAR_TYPES = tuple(ELEMENT_TYPES.values())
_DISTRIBUTION_FIELDS = ("pattern", "unit-id", "section")


# ---- 中间结果 ----

@dataclass
class _Word:
    name: str
    pos: Optional[SourcePosition]


@dataclass
class _Term:
    """字段：name 或 name(items)；items 为 None 表示不带括号"""
    name: str
    items: Optional[List[object]]
    pos: Optional[SourcePosition]


@dataclass
class _Pair:
    key: str
    value: object
    pos: Optional[SourcePosition]


@dataclass
class _DataSpec:
    symbol: str
    items: List[object]
    pos: Optional[SourcePosition]


@dataclass
class _Ref:
    id: int
    pos: Optional[SourcePosition]


@dataclass
class _FuncRef:
    name: str


@dataclass
class _OpToken:
    op: str


@dataclass
class _Sections:
    subscripts: Tuple[ArraySection, ...]


@dataclass
class _LoopParallelOp:
    parallel: LoopParallel
    body: list
    pos: Optional[SourcePosition]


class _Terms:
    """按名字取字段，检查重复与多余字段"""

    def __init__(self, terms: List[_Term], op: str, pos):
        self.op = op
        self.pos = pos
        self.terms: Dict[str, _Term] = {}
        for term in terms:
            if term.name in self.terms:
                raise UpirSyntaxError(f"{op} 的字段 {term.name} 重复出现", term.pos)
            self.terms[term.name] = term

    def take(self, name: str) -> Optional[_Term]:
        return self.terms.pop(name, None)

    def take_one_of(self, names) -> Optional[_Term]:
        found = [n for n in names if n in self.terms]
        if len(found) > 1:
            raise UpirSyntaxError(f"{self.op} 不能同时有 {found[0]} 和 {found[1]}", self.pos)
        return self.terms.pop(found[0]) if found else None

    def flag(self, name: str) -> bool:
        term = self.take(name)
        if term is not None and term.items is not None:
            raise UpirSyntaxError(f"{self.op} 的字段 {name} 不带参数", term.pos)
        return term is not None

    def finish(self) -> None:
        if self.terms:
            term = next(iter(self.terms.values()))
            raise UpirSyntaxError(f"{self.op} 不认识的字段: {term.name}", term.pos)


def _fail(message: str, pos=None):
    raise UpirSyntaxError(message, pos)


def _args(term: _Term, count: Optional[int] = None) -> List[object]:
    if term.items is None:
        _fail(f"字段 {term.name} 需要参数", term.pos)
    if count is not None and len(term.items) != count:
        _fail(f"字段 {term.name} 需要 {count} 个参数", term.pos)
    return term.items


def _expr(value, term_pos, what: str):
    if not isinstance(value, (IntLit, FloatLit, Ident, Index, BinOp, Neg, Intrinsic)):
        _fail(f"{what} 需要一个表达式", term_pos)
    return value


def _int_const(value, term_pos, what: str) -> int:
    if not isinstance(value, IntLit):
        _fail(f"{what} 需要整数常量", term_pos)
    return value.value


def _symbol(value, term_pos, what: str) -> str:
    if not isinstance(value, Ident):
        _fail(f"{what} 需要一个 % 符号", term_pos)
    return value.name


def _word(value, choices, term_pos, what: str) -> str:
    if not isinstance(value, _Word) or (choices is not None and value.name not in choices):
        allowed = "、".join(choices) if choices else "名字"
        _fail(f"{what} 只能是 {allowed}", term_pos)
    return value.name


def _refs(term: _Term) -> List[int]:
    ids = []
    for item in _args(term):
        if not isinstance(item, _Ref):
            _fail(f"字段 {term.name} 需要 #N 引用列表", term.pos)
        ids.append(item.id)
    return ids


def _device(value, pos) -> Tuple[str, int]:
    if not isinstance(value, _Pair) or not isinstance(value.value, int):
        _fail("设备需要写成 名字:编号", pos)
    if value.key not in DEVICES:
        _fail(f"未知设备: {value.key}", pos)
    return value.key, value.value


def _space(value, pos) -> str:
    if isinstance(value, _Word) and value.name == "host":
        return "host"
    device, device_id = _device(value, pos)
    return f"{device}:{device_id}"


def _depend(term: _Term) -> List[Depend]:
    result = []
    for item in _args(term):
        if not isinstance(item, _Pair) or item.key not in DEPEND_MODES:
            _fail("depend 需要 in/out/inout: 符号 的列表", term.pos)
        result.append(Depend(item.key, _expr(item.value, term.pos, "depend")))
    return result


def _data_items(term: Optional[_Term]) -> List[DataItem]:
    if term is None:
        return []
    items = []
    seen = set()
    for spec in _args(term):
        if not isinstance(spec, _DataSpec):
            _fail("data 需要 %符号(属性, ...) 的列表", term.pos)
        if spec.symbol in seen:
            _fail(f"data 中符号 {spec.symbol} 重复", spec.pos)
        seen.add(spec.symbol)
        items.append(_data_item(spec))
    return items


def _data_item(spec: _DataSpec) -> DataItem:
    item = DataItem(spec.symbol)
    distribution_seen = set()

    def once(field_name: str):
        if getattr(item, field_name) is not None:
            _fail(f"符号 {spec.symbol} 的 {field_name} 属性重复", spec.pos)

    for attr in spec.items:
        if isinstance(attr, _Word) and attr.name in ACCESS_MODES:
            once("access")
            item.access = attr.name
            continue
        if not isinstance(attr, _Term) or attr.items is None:
            _fail(f"符号 {spec.symbol} 有无法识别的属性", spec.pos)
        args = attr.items
        if attr.name in SHARING_PROPERTIES:
            once("sharing")
            item.sharing = Attribute(attr.name, _word(args[0] if args else None, VISIBILITIES,
                                                      attr.pos, "可见性"))
            if len(args) != 1:
                _fail(f"{attr.name} 只接受可见性参数", attr.pos)
        elif attr.name in MAPPING_PROPERTIES:
            once("mapping")
            if not 1 <= len(args) <= 2:
                _fail(f"{attr.name} 需要可见性和可选的 mapper", attr.pos)
            mapper = _symbol(args[1], attr.pos, "mapper") if len(args) == 2 else None
            item.mapping = Attribute(attr.name, _word(args[0], VISIBILITIES, attr.pos, "可见性"), mapper)
        elif attr.name in _DISTRIBUTION_FIELDS:
            if attr.name in distribution_seen:
                _fail(f"符号 {spec.symbol} 的 {attr.name} 属性重复", spec.pos)
            distribution_seen.add(attr.name)
            if item.distribution is None:
                item.distribution = Distribution()
            _distribution_field(item.distribution, attr)
        elif attr.name in ("allocator", "deallocator"):
            once(attr.name)
            if len(args) != 1:
                _fail(f"{attr.name} 需要一个参数", attr.pos)
            builtins = ALLOCATORS if attr.name == "allocator" else DEALLOCATORS
            value = args[0]
            if isinstance(value, _Word):
                name = _word(value, builtins, attr.pos, attr.name)
            else:
                name = _symbol(value, attr.pos, attr.name)
            setattr(item, attr.name, name)
        elif attr.name == "memcpy":
            once("memcpy")
            item.memcpy = _funcref(attr)
        else:
            _fail(f"符号 {spec.symbol} 有未知属性 {attr.name}", attr.pos)
    return item


def _distribution_field(dist: Distribution, term: _Term) -> None:
    """pattern、unit-id、section 三项共同组成数据项的分布属性"""
    args = term.items
    if term.name == "pattern":
        if len(args) != 1:
            _fail("pattern 需要一个分布模式", term.pos)
        dist.pattern = _word(args[0], DISTRIBUTION_PATTERNS, term.pos, "分布模式")
    elif term.name == "unit-id":
        if len(args) != 1:
            _fail("unit-id 需要一个表达式", term.pos)
        dist.unit_id = _expr(args[0], term.pos, "unit-id")
    else:
        if len(args) != 1 or not isinstance(args[0], _Sections):
            _fail("section 需要 [下界:长度:步长] 形式的数组段", term.pos)
        dist.section = args[0].subscripts


def _funcref(term: _Term) -> str:
    args = _args(term, 1)
    if not isinstance(args[0], _FuncRef):
        _fail(f"{term.name} 需要 @函数名", term.pos)
    return args[0].name


def _sync_unit(term: _Term) -> SyncUnit:
    args = _args(term, 1)
    pair = args[0]
    if not isinstance(pair, _Pair) or pair.key not in SYNC_UNIT_KINDS:
        _fail(f"{term.name} 需要写成 task|thread|rank:编号或*", term.pos)
    if isinstance(pair.value, _OpToken) and pair.value.op == "*":
        return SyncUnit(pair.key, None)
    return SyncUnit(pair.key, _expr(pair.value, term.pos, term.name))


def _plain_region(nodes: list) -> list:
    for node in nodes:
        if isinstance(node, _LoopParallelOp):
            _fail("upir.loop-parallel 只能作为 upir.loop 的唯一内容", node.pos)
    return nodes


@v_args(meta=True)
class _UpirBuilder(Transformer):
    """解析树到 UPIR 节点；未加标签的节点使用负数临时 id"""

    def __init__(self, file: str):
        super().__init__()
        self.file = file
        self._fresh = 0
        self.labels: Dict[int, SourcePosition] = {}

    def _pos(self, meta) -> Optional[SourcePosition]:
        if getattr(meta, "empty", True):
            return None
        return SourcePosition(self.file, meta.line, meta.column)

    def _tok_pos(self, token) -> SourcePosition:
        return SourcePosition(self.file, token.line, token.column)

    # ---- 顶层 ----

    def start(self, meta, children):
        return UpirModule(list(children))

    def func(self, meta, children):
        kernel_word, name, *rest = children
        body = rest[-1]
        return_type = rest[-2]
        params = [p for p in rest[:-2] if p is not None]
        if kernel_word is not None and str(kernel_word) != "kernel":
            _fail(f"upir.func 不认识的修饰: {kernel_word}", self._tok_pos(kernel_word))
        if return_type is not None and str(return_type) not in _SCALAR_TYPES:
            _fail(f"未知返回类型: {return_type}", self._tok_pos(return_type))
        return UpirFunction(str(name)[1:], params, str(return_type) if return_type is not None else None,
                            kernel_word is not None, _plain_region(body))

    def param(self, meta, children):
        name, (type_name, dims) = children
        return UpirParam(name, type_name, dims)

    def type(self, meta, children):
        name = str(children[0])
        if name not in _SCALAR_TYPES:
            _fail(f"未知类型: {name}", self._tok_pos(children[0]))
        return name, tuple(children[1:])

    def dim(self, meta, children):
        return children[0] if children else None

    def region(self, meta, children):
        return list(children)

    def op(self, meta, children):
        label, node = children
        if label is not None:
            if isinstance(node, _LoopParallelOp):
                _fail("upir.loop-parallel 不能带标签", self._tok_pos(label))
            number = int(str(label)[1:])
            if number in self.labels:
                _fail(f"标签 #{number} 重复定义", self._tok_pos(label))
            self.labels[number] = self._tok_pos(label)
            node.id = number
        elif not isinstance(node, _LoopParallelOp):
            self._fresh -= 1
            node.id = self._fresh
        return node

    # ---- 操作 ----

    def spmd(self, meta, children):
        pos = self._pos(meta)
        terms = _Terms(children[:-1], "upir.spmd", pos)
        node = SpmdNode(body=_plain_region(children[-1]))
        term = terms.take("target")
        if term is not None:
            node.targets = [_word(t, SPMD_TARGETS, term.pos, "target") for t in _args(term)]
        for name, attr in (("num_teams", "num_teams"), ("num_units", "num_units")):
            term = terms.take(name)
            if term is not None:
                setattr(node, attr, _expr(_args(term, 1)[0], term.pos, name))
        node.data = _data_items(terms.take("data"))
        for name, attr in (("nested-parent", "nested_parent"), ("nested-child", "nested_child")):
            term = terms.take(name)
            if term is not None:
                refs = _refs(term)
                if len(refs) != 1:
                    _fail(f"{name} 需要一个引用", term.pos)
                setattr(node, attr, refs[0])
        term = terms.take("nested-level")
        if term is not None:
            node.nested_level = _int_const(_args(term, 1)[0], term.pos, "nested-level")
        term = terms.take("branch")
        if term is not None:
            node.branch = _refs(term)
        term = terms.take("sync")
        if term is not None:
            node.sync = _refs(term)
        terms.finish()
        return node

    def loop(self, meta, children):
        pos = self._pos(meta)
        terms = _Terms(children[:-1], "upir.loop", pos)
        body = children[-1]
        node = LoopNode()
        if len(body) == 1 and isinstance(body[0], _LoopParallelOp):
            node.parallel = body[0].parallel
            node.body = body[0].body
        else:
            node.body = _plain_region(body)
        for name, attr in (("lowerBound", "lower"), ("upperBound", "upper"), ("step", "step")):
            term = terms.take(name)
            if term is None:
                _fail(f"upir.loop 缺少字段 {name}", pos)
            setattr(node, attr, _expr(_args(term, 1)[0], term.pos, name))
        term = terms.take("induction")
        if term is None:
            _fail("upir.loop 缺少字段 induction", pos)
        node.var = _symbol(_args(term, 1)[0], term.pos, "induction")
        node.data = _data_items(terms.take("data"))
        term = terms.take("collapse")
        if term is not None:
            node.collapse = _int_const(_args(term, 1)[0], term.pos, "collapse")
        term = terms.take("sync")
        if term is not None:
            node.sync = _refs(term)
        terms.finish()
        return node

    def loop_parallel(self, meta, children):
        pos = self._pos(meta)
        kinds = children[:-1]
        if len(kinds) != 1:
            _fail("upir.loop-parallel 需要且只能有一个并行方式", pos)
        kind = kinds[0]
        parallel = LoopParallel(kind.name)
        args = kind.items or []
        if kind.name == "worksharing":
            sub = _Terms([a if isinstance(a, _Term) else _Term(a.name, None, a.pos)
                          for a in args if isinstance(a, (_Term, _Word))], "worksharing", pos)
            if len(sub.terms) != len(args):
                _fail("worksharing 的参数格式错误", pos)
            term = sub.take("schedule")
            if term is not None:
                values = _args(term)
                if not 1 <= len(values) <= 2:
                    _fail("schedule 需要策略和可选的块大小", term.pos)
                parallel.schedule = _word(values[0], SCHEDULE_POLICIES, term.pos, "调度策略")
                if len(values) == 2:
                    parallel.chunk = _expr(values[1], term.pos, "块大小")
            term = sub.take("distribute")
            if term is not None:
                targets = [_word(v, ("teams", "units"), term.pos, "distribute") for v in _args(term)]
                if targets not in (["teams"], ["units"], ["teams", "units"]):
                    _fail("distribute 只能是 teams、units 或 teams, units", term.pos)
                parallel.distribute = ",".join(targets)
            parallel.nowait = sub.flag("nowait")
            sub.finish()
        elif kind.name in ("simd", "taskloop"):
            allowed = ("simdlen",) if kind.name == "simd" else ("grainsize", "num_tasks")
            for arg in args:
                if not isinstance(arg, _Term) or arg.name not in allowed or arg.items is None \
                        or len(arg.items) != 1:
                    _fail(f"{kind.name} 的参数只能是 {'、'.join(allowed)}(表达式)", pos)
                if getattr(parallel, arg.name) is not None:
                    _fail(f"{kind.name} 的参数 {arg.name} 重复", pos)
                setattr(parallel, arg.name, _expr(arg.items[0], pos, arg.name))
        else:
            _fail(f"未知的循环并行方式: {kind.name}", pos)
        return _LoopParallelOp(parallel, _plain_region(children[-1]), pos)

    def task(self, meta, children):
        pos = self._pos(meta)
        terms = _Terms(children[:-1], "upir.task", pos)
        node = TaskNode(body=_plain_region(children[-1]))
        term = terms.take_one_of(("offload", "remote"))
        if term is not None:
            node.kind = term.name
            node.device, node.device_id = _device(_args(term, 1)[0], term.pos)
        term = terms.take("depend")
        if term is not None:
            node.depend = _depend(term)
        node.data = _data_items(terms.take("data"))
        term = terms.take("sync")
        if term is not None:
            node.sync = _refs(term)
        term = terms.take("policy")
        if term is not None:
            node.policy = _word(_args(term, 1)[0], TASK_POLICIES, term.pos, "policy")
        node.is_async = terms.flag("async")
        terms.finish()
        return node

    def data_region(self, meta, children):
        terms = _Terms(children[:-1], "upir.data", self._pos(meta))
        node = DataRegionNode(data=_data_items(terms.take("data")), body=_plain_region(children[-1]))
        terms.finish()
        return node

    def data_movement(self, meta, children):
        pos = self._pos(meta)
        args, term_list = children[0], children[1:]
        if len(args) != 5:
            _fail("upir.data_movement 需要 (目标空间, 目标符号, 源空间, 源符号, 字节数)", pos)
        node = DataMovementNode(
            dest_target=_space(args[0], pos), dest_ptr=_symbol(args[1], pos, "目标符号"),
            src_target=_space(args[2], pos), src_ptr=_symbol(args[3], pos, "源符号"),
            size=_expr(args[4], pos, "字节数"),
        )
        self._movement_terms(node, term_list, "upir.data_movement", pos)
        return node

    def data_update(self, meta, children):
        pos = self._pos(meta)
        args, term_list = children[0], children[1:]
        if not args:
            _fail("upir.data_update 至少需要一个符号", pos)
        node = DataUpdateNode(items=[_expr(a, pos, "data_update") for a in args])
        for item in node.items:
            if not isinstance(item, (Ident, Index)):
                _fail("upir.data_update 只接受符号或数组段", pos)
        terms = self._movement_terms(node, term_list, "upir.data_update", pos, finish=False)
        term = terms.take("device")
        if term is not None:
            node.device = _space(_args(term, 1)[0], term.pos)
        terms.finish()
        return node

    def _movement_terms(self, node, term_list, op, pos, finish=True) -> _Terms:
        terms = _Terms(term_list, op, pos)
        direction = terms.take_one_of(MOVEMENT_DIRECTIONS)
        if direction is None or direction.items is not None:
            _fail(f"{op} 需要方向 forward 或 backward", pos)
        node.direction = direction.name
        term = terms.take("memcpy")
        if term is not None:
            node.memcpy = _funcref(term)
        term = terms.take("depend")
        if term is not None:
            node.depend = _depend(term)
        if finish:
            terms.finish()
        return terms

    def mm_alloc(self, meta, children):
        pos = self._pos(meta)
        args, symbol, (type_name, dims) = children
        if len(dims) != 1 or dims[0] is None:
            _fail("upir.mm_allocator 的类型需要元素个数，如 f64[%c16]", pos)
        return MmAllocNode(allocator=self._allocator(args, ALLOCATORS, pos), symbol=symbol,
                           element_type=type_name, count=dims[0])

    def mm_dealloc(self, meta, children):
        pos = self._pos(meta)
        args, symbol = children
        return MmDeallocNode(deallocator=self._allocator(args, DEALLOCATORS, pos), symbol=symbol)

    @staticmethod
    def _allocator(args, builtins, pos) -> str:
        if len(args) != 1:
            _fail("分配器属性需要一个参数", pos)
        if isinstance(args[0], _Word):
            return _word(args[0], builtins, pos, "分配器")
        return _symbol(args[0], pos, "分配器")

    def sync(self, meta, children):
        pos = self._pos(meta)
        name_token, *rest = children
        body = rest.pop() if rest and (rest[-1] is None or isinstance(rest[-1], list)) else None
        name = str(name_token)
        if name not in SYNC_NAMES:
            _fail(f"未知同步名: {name}", self._tok_pos(name_token))
        terms = _Terms(rest, "upir.sync", pos)
        node = SyncNode(name=name, body=_plain_region(body) if body is not None else None)
        mode = terms.take_one_of(("sync", "async"))
        if mode is None:
            _fail("upir.sync 需要 sync 或 async(步骤)", pos)
        if mode.name == "async":
            node.mode = "async"
            node.step = _word(_args(mode, 1)[0], SYNC_STEPS, mode.pos, "异步步骤")
        elif mode.items is not None:
            _fail("sync 不带参数", mode.pos)
        for field_name in ("primary", "secondary"):
            term = terms.take(field_name)
            if term is not None:
                setattr(node, field_name, _sync_unit(term))
        term = terms.take("operation")
        if term is not None:
            value = _args(term, 1)[0]
            op = value.op if isinstance(value, _OpToken) else getattr(value, "name", None)
            if op not in REDUCTION_OPERATIONS:
                _fail(f"未知归约运算: {op}", term.pos)
            node.operation = op
        term = terms.take("data")
        if term is not None:
            node.data = [_symbol(v, term.pos, "data") for v in _args(term)]
        term = terms.take("lock")
        if term is not None:
            node.lock = _symbol(_args(term, 1)[0], term.pos, "lock")
        node.implicit = terms.flag("implicit")
        terms.finish()
        return node

    def ext(self, meta, children):
        pos = self._pos(meta)
        terms = [c for c in children if isinstance(c, _Term)]
        entries = [c for c in children if isinstance(c, tuple)]
        fields = _Terms(terms, "upir.ext", pos)
        node = ExtensionNode()
        term = fields.take("attach")
        if term is not None:
            refs = _refs(term)
            if len(refs) != 1:
                _fail("attach 需要一个引用", term.pos)
            node.attach = refs[0]
        fields.finish()
        keys = set()
        for key, value in entries:
            if key in keys:
                _fail(f"扩展键 {key} 重复", pos)
            keys.add(key)
            node.entries.append((key, value))
        return node

    def ext_entry(self, meta, children):
        return str(children[0]), children[1] if len(children) > 1 else None

    def string_value(self, meta, children):
        text = str(children[0])[1:-1]
        out, i = [], 0
        while i < len(text):
            if text[i] == "\\" and i + 1 < len(text):
                out.append(text[i + 1])
                i += 2
            else:
                out.append(text[i])
                i += 1
        return "".join(out)

    def symbol_list(self, meta, children):
        return [c for c in children if c is not None]

    def if_op(self, meta, children):
        cond, then = children[0], children[1]
        orelse = children[2] if len(children) > 2 else None
        return IfNode(cond=cond, then=_plain_region(then),
                      orelse=_plain_region(orelse) if orelse is not None else None)

    def decl(self, meta, children):
        name, type_token = children[0], children[1]
        init = children[2] if len(children) > 2 else None
        if str(type_token) not in _SCALAR_TYPES:
            _fail(f"未知类型: {type_token}", self._tok_pos(type_token))
        return DeclNode(name=name, type=str(type_token), init=init)

    def assign(self, meta, children):
        target, value = children
        if not isinstance(target, (Ident, Index)):
            _fail("upir.assign 的左边必须是符号或数组元素", self._pos(meta))
        return AssignNode(target=target, value=value)

    def call(self, meta, children):
        args = [c for c in children[1:] if c is not None]
        return CallNode(name=str(children[0])[1:], args=args)

    def return_op(self, meta, children):
        return ReturnNode(value=children[0] if children else None)

    # ---- 字段 ----

    def bare_term(self, meta, children):
        return _Term(str(children[0]), None, self._tok_pos(children[0]))

    def paren_term(self, meta, children):
        return _Term(str(children[0]), children[1], self._tok_pos(children[0]))

    def items(self, meta, children):
        return [c for c in children if c is not None]

    def word(self, meta, children):
        return _Word(str(children[0]), self._tok_pos(children[0]))

    def nested(self, meta, children):
        return _Term(str(children[0]), children[1], self._tok_pos(children[0]))

    def pair(self, meta, children):
        return _Pair(str(children[0]), children[1], self._tok_pos(children[0]))

    def data_item(self, meta, children):
        return _DataSpec(children[0], children[1], self._pos(meta))

    def ref(self, meta, children):
        return _Ref(int(str(children[0])[1:]), self._tok_pos(children[0]))

    def funcref(self, meta, children):
        return _FuncRef(str(children[0])[1:])

    def op_token(self, meta, children):
        return _OpToken(str(children[0]))

    def int_token(self, meta, children):
        return int(str(children[0]))

    def sections(self, meta, children):
        for sub in children:
            if not isinstance(sub, ArraySection):
                _fail("section 只接受 [下界:长度:步长] 形式", self._pos(meta))
        return _Sections(tuple(children))

    # ---- 表达式 ----

    def const(self, meta, children):
        text = str(children[0])[2:]
        if any(ch in text for ch in ".eE"):
            return FloatLit(float(text))
        return IntLit(int(text))

    def sym(self, meta, children):
        text = str(children[0])
        return text[2:-1] if text.startswith('%"') else text[1:]

    def symbol(self, meta, children):
        return Ident(children[0], pos=self._pos(meta))

    def index(self, meta, children):
        return Index(children[0], tuple(children[1:]), pos=self._pos(meta))

    def intrinsic(self, meta, children):
        name = str(children[0])[1:]
        if name not in INTRINSICS:
            _fail(f"未知内建函数: @{name}", self._tok_pos(children[0]))
        return Intrinsic(name)

    def binary(self, meta, children):
        lhs, op, rhs = children
        if str(op) not in ARITH_OPS + COMPARE_OPS:
            _fail(f"未知运算符: {op}", self._tok_pos(op))
        return BinOp(str(op), lhs, rhs)

    def unary(self, meta, children):
        op, operand = children
        if str(op) != "-":
            _fail(f"一元运算只支持 -，实际是 {op}", self._tok_pos(op))
        return Neg(operand)

    def sub_index(self, meta, children):
        return children[0]

    def sub_section(self, meta, children):
        lower, length, stride = children
        return ArraySection(lower, length, stride)


def _check_labels(module: UpirModule) -> None:
    ids = {node.id for node in walk(module)}
    for node in walk(module):
        for ref in references(node):
            if ref not in ids:
                _fail(f"引用了未定义的标签 #{ref}")


def parse_upir(text: str, file: str = "<input>", validate: bool = True) -> UpirModule:
    """
    解析 UPIR 文本

    Args:
        text: UPIR 文本
        file: 文件名，用于诊断信息
        validate: 是否做结构校验

    Returns:
        规范化后的 UpirModule
    """
    try:
        tree = _PARSER.parse(text)
        builder = _UpirBuilder(file)
        module = builder.transform(tree)
    except UnexpectedCharacters as e:
        raise UpirSyntaxError(f"无法识别的字符 {text[e.pos_in_stream]!r}",
                              SourcePosition(file, e.line, e.column))
    except UnexpectedInput as e:
        token = getattr(e, "token", None)
        shown = f" {str(token)!r}" if token is not None and str(token) else ""
        raise UpirSyntaxError(f"UPIR 语法错误，意外的记号{shown}",
                              SourcePosition(file, max(e.line, 1), max(e.column, 1)))
    except VisitError as e:
        if isinstance(e.orig_exc, UpirSyntaxError):
            raise e.orig_exc.with_file(file)
        raise

    try:
        _check_labels(module)
    except UpirSyntaxError as e:
        raise e.with_file(file)
    if validate:
        check_upir(module)
    logger.debug(f"解析 UPIR {file}: {len(module.functions)} 个函数")
    return canonicalize(module)
