"""
UPIR 反解析为 OpenMP / OpenACC 源码

先去掉分析阶段补出的内容（隐式同步、隐式属性、嵌套与分支标注），
再把 task/spmd/loop 节点链尽量合并成一条组合指令。每条候选指令都用构建器在原地重建，
重建结果与原节点打印一致才采用，否则退到更短的节点链；整个程序最后再整体重建核对一次。
"""

import copy
import logging
from typing import Dict, List, Optional, Tuple

from ..frontend.ast_nodes import (
    Annotated, Assign, BinOp, Block, Call, Clause, Decl, Directive, DirectiveStmt, For, ForUpdate,
    Function, Ident, If, Index, IntLit, Param, Program, Return
)
from ..frontend.c_printer import format_program
from ..frontend.directive_parser import ACC_COMBINATIONS, OMP_COMBINATIONS
from ..frontend.kernel_parser import parse_kernel_source
from ..upir.builder import BuildContext, UpirBuilder, build_upir
from ..upir.nodes import (
    C_TYPES, AssignNode, CallNode, DataItem, DataMovementNode, DataRegionNode, DataUpdateNode,
    DeclNode, ExtensionNode, IfNode, LoopNode, MmAllocNode, MmDeallocNode, Node, ReturnNode,
    SpmdNode, SyncNode, TaskNode, UpirFunction, UpirModule
)
from ..upir.printer import print_upir
from ..upir.traversal import child_regions, node_index
from ..utils.errors import RoundTripError, UnrepresentableError, UpircError

logger = logging.getLogger(__name__)

OPENMP = "openmp"
OPENACC = "openacc"
LANGUAGE_NAMES = {OPENMP: "OpenMP", OPENACC: "OpenACC"}

# 各编程模型能表达的 UPIR 成分
REPRESENTABLE = {
    OPENMP: frozenset({
        "offload-task", "plain-task", "async-offload", "data-region", "spmd", "worksharing", "simd",
        "taskloop", "barrier", "taskwait", "reduction", "single", "critical", "atomic", "update",
        "schedule", "shared", "private", "firstprivate", "lastprivate", "map", "depend", "allocate",
        "device-id", "nowait-loop", "simdlen", "grainsize", "num_tasks", "collapse",
    }),
    OPENACC: frozenset({
        "offload-task", "async-offload", "data-region", "spmd", "worksharing", "simd", "taskwait",
        "reduction", "update", "private", "firstprivate", "map", "collapse",
    }),
}

_MAP_MODIFIERS = {"to": "to", "from": "from", "tofrom": "tofrom", "allocate": "alloc"}
_ACC_MAPPINGS = {"to": "copyin", "from": "copyout", "tofrom": "copy", "allocate": "create"}
_OMP_ALLOCATOR_NAMES = {"large_cap_mem_alloc": "omp_large_cap_mem_alloc"}
_OMP_LOOP_WORDS = {"units": ("for",), "teams": ("distribute",), "teams,units": ("distribute", "parallel", "for")}
_ACC_LOOP_WORDS = {"units": (), "teams": ("gang",), "teams,units": ("gang", "worker")}
_CLAUSE_ORDER = (
    "critical", "device", "num_teams", "num_gangs", "thread_limit", "num_threads", "num_workers",
    "gang", "worker", "vector", "shared", "private", "firstprivate", "lastprivate",
    "map", "copyin", "copyout", "copy", "create", "depend", "reduction", "allocate",
    "schedule", "dist_schedule", "collapse", "simdlen", "grainsize", "num_tasks", "nowait", "async",
)


# ---- 去掉分析结果 ----

def _strip_item(item: DataItem) -> Optional[DataItem]:
    if item.sharing is not None and item.sharing.visibility == "implicit":
        item.sharing = None
    if item.mapping is not None and item.mapping.visibility == "implicit":
        item.mapping = None
    item.access = None
    dist = item.distribution
    if dist is not None and dist.pattern == "block" and dist.unit_id is None and not dist.section:
        item.distribution = None
    if item.allocator in (None, "default_mem_alloc") and item.deallocator in (None, "default_mem_dealloc"):
        item.allocator = item.deallocator = None
    fields = (item.sharing, item.mapping, item.distribution, item.allocator, item.deallocator, item.memcpy)
    return item if any(f is not None for f in fields) else None


def _strip_region(region: List[Node]) -> None:
    region[:] = [n for n in region if not (isinstance(n, SyncNode) and n.implicit)]
    for node in region:
        if isinstance(node, SpmdNode):
            node.nested_parent = node.nested_child = node.nested_level = None
            node.branch = []
        if isinstance(node, (SpmdNode, LoopNode, TaskNode, DataRegionNode)):
            node.data = [i for i in (_strip_item(item) for item in node.data) if i is not None]
        for sub in child_regions(node):
            _strip_region(sub)


def strip_analysis(module: UpirModule) -> UpirModule:
    """
    去掉分析补出的内容，得到构建器直接产生的形式

    Args:
        module: UPIR 模块，输入不变

    Returns:
        新模块
    """
    result = copy.deepcopy(module)
    for function in result.functions:
        _strip_region(function.body)
    return result


# ---- 片段比较 ----

def _fragment_text(nodes: List[Node]) -> Optional[str]:
    try:
        return print_upir(UpirModule([UpirFunction("fragment", body=list(nodes))]), validate=False)
    except UpircError:
        return None


def _same(expected: List[Node], built: List[Node]) -> bool:
    text = _fragment_text(expected)
    return text is not None and text == _fragment_text(built)


def _is_construct(node: Node) -> bool:
    if isinstance(node, (SpmdNode, TaskNode, DataRegionNode)):
        return True
    if isinstance(node, LoopNode):
        return node.parallel is not None
    return isinstance(node, SyncNode) and node.body is not None


class _Unparser:
    def __init__(self, language: str, module: UpirModule):
        self.language = language
        self.module = module
        self.index = node_index(module)

    # ---- 错误 ----

    def fail(self, node: Node, what: str) -> UnrepresentableError:
        return UnrepresentableError(f"{LANGUAGE_NAMES[self.language]} 无法表达节点 #{node.id}: {what}")

    def require(self, feature: str, node: Node) -> None:
        if feature not in REPRESENTABLE[self.language]:
            raise self.fail(node, feature)

    # ---- 顶层 ----

    def program(self) -> str:
        return format_program([self.function(f) for f in self.module.functions])

    def function(self, fn: UpirFunction) -> Function:
        params = tuple(Param(C_TYPES[p.type], p.name, tuple(p.dims)) for p in fn.params)
        return_type = C_TYPES[fn.return_type] if fn.return_type else "void"
        body = Block(tuple(self.region(fn.body, BuildContext())))
        return Function(fn.name, return_type, params, body, fn.is_kernel)

    def region(self, region: List[Node], ctx: BuildContext) -> list:
        stmts = []
        index = 0
        while index < len(region):
            exts: List[ExtensionNode] = []
            while isinstance(region[index], ExtensionNode):
                exts.append(region[index])
                index += 1
                if index >= len(region):
                    raise self.fail(exts[0], "扩展节点后面没有可附着的构造")
            node = region[index]
            for ext in exts:
                if ext.attach != node.id or not _is_construct(node):
                    raise self.fail(ext, "扩展节点没有附着在紧随其后的构造上")
            if _is_construct(node):
                stmt, consumed = self.construct(region, index, exts, ctx)
                stmts.append(stmt)
                index += consumed
            else:
                stmts.append(self.statement(node, ctx))
                index += 1
        return stmts

    # ---- 语句 ----

    def statement(self, node: Node, ctx: BuildContext):
        if isinstance(node, DeclNode):
            return Decl(C_TYPES[node.type], node.name, node.init)
        if isinstance(node, AssignNode):
            return Assign(node.target, node.value)
        if isinstance(node, CallNode):
            return Call(node.name, tuple(node.args))
        if isinstance(node, ReturnNode):
            return Return(node.value)
        if isinstance(node, IfNode):
            orelse = Block(tuple(self.region(node.orelse, ctx))) if node.orelse is not None else None
            return If(node.cond, Block(tuple(self.region(node.then, ctx))), orelse)
        if isinstance(node, LoopNode):
            return self.for_stmt(node, ctx)
        if isinstance(node, SyncNode):
            return self.standalone_sync(node)
        if isinstance(node, DataUpdateNode):
            return self.update(node)
        if isinstance(node, DataMovementNode):
            raise self.fail(node, "data_movement")
        if isinstance(node, (MmAllocNode, MmDeallocNode)):
            raise self.fail(node, "mm_allocator/mm_deallocator")
        raise self.fail(node, type(node).__name__)

    def for_stmt(self, loop: LoopNode, ctx: BuildContext) -> For:
        step = loop.step if loop.step is not None else IntLit(1)
        return For(Decl("int", loop.var, loop.lower), BinOp("<", Ident(loop.var), loop.upper),
                   ForUpdate(loop.var, "+", step), Block(tuple(self.region(loop.body, ctx))))

    def standalone_sync(self, node: SyncNode) -> DirectiveStmt:
        if node.name == "barrier":
            self.require("barrier", node)
            directive = Directive(self.language, ("barrier",))
        elif node.name == "taskwait":
            self.require("taskwait", node)
            directive = Directive(self.language, ("taskwait",) if self.language == OPENMP else ("wait",))
        else:
            raise self.fail(node, f"独立的 {node.name} 同步")
        return self.verified_standalone(node, directive)

    def update(self, node: DataUpdateNode) -> DirectiveStmt:
        self.require("update", node)
        if node.memcpy is not None:
            raise self.fail(node, "memcpy 属性")
        clauses = []
        if self.language == OPENMP:
            constructs = ("target", "update")
            device, _, number = node.device.partition(":")
            if number and number != "0":
                clauses.append(Clause("device", None, (IntLit(int(number)),), True))
            name = "to" if node.direction == "forward" else "from"
            clauses.append(Clause(name, None, tuple(node.items), True))
            clauses.extend(Clause("depend", d.mode, (d.target,), True) for d in node.depend)
        else:
            if node.depend:
                raise self.fail(node, "depend")
            constructs = ("update",)
            name = "device" if node.direction == "forward" else "self"
            clauses.append(Clause(name, None, tuple(node.items), True))
        return self.verified_standalone(node, Directive(self.language, constructs, tuple(clauses)))

    def verified_standalone(self, node: Node, directive: Directive) -> DirectiveStmt:
        try:
            built = UpirBuilder(Program()).standalone(directive)
        except UpircError as e:
            raise self.fail(node, e.message)
        if not _same([node], built):
            raise self.fail(node, "独立指令无法还原节点的全部字段")
        return DirectiveStmt(directive)

    # ---- 构造链 ----

    def chain(self, head: Node) -> List[Node]:
        """从 head 开始，每个节点的区域只含下一个构造（及登记的 reduction）时连成一条链"""
        chain = [head]
        node = head
        while isinstance(node, (TaskNode, SpmdNode)) and node.body:
            nxt = node.body[0]
            if not _is_construct(nxt) or isinstance(nxt, SyncNode):
                break
            owned = set(getattr(node, "sync", ())) | (set(nxt.sync) if isinstance(nxt, LoopNode) else set())
            if any(not (isinstance(r, SyncNode) and r.name == "reduction" and r.id in owned)
                   for r in node.body[1:]):
                break
            chain.append(nxt)
            node = nxt
        return chain

    def construct(self, region: List[Node], index: int, exts: List[ExtensionNode],
                  ctx: BuildContext) -> Tuple[Annotated, int]:
        head = region[index]
        after: List[Node] = []
        if isinstance(head, LoopNode):
            cursor = index + 1
            while cursor < len(region) and isinstance(region[cursor], SyncNode) \
                    and region[cursor].name == "reduction" and region[cursor].id in head.sync:
                after.append(region[cursor])
                cursor += 1
        expected = list(exts) + [head] + after

        chain = self.chain(head)
        error: Optional[UnrepresentableError] = None
        for length in range(len(chain), 0, -1):
            prefix = chain[:length]
            try:
                directive = self.directive(prefix, exts)
                if directive is None:
                    continue
                stmt = self.inner_stmt(prefix, ctx)
            except UnrepresentableError as e:
                error = error or e
                continue
            try:
                built = UpirBuilder(Program()).annotated(directive, stmt, ctx)
            except UpircError as e:
                logger.debug(f"候选指令重建失败: {e.message}")
                continue
            if _same(expected, built):
                logger.debug(f"节点 #{head.id} 合并 {length} 层构造")
                return Annotated(directive, stmt), 1 + len(after)
        raise error or self.fail(head, "没有能还原该节点的指令写法")

    def inner_stmt(self, prefix: List[Node], ctx: BuildContext):
        for node in prefix:
            ctx = ctx.enter(node)
        last = prefix[-1]
        if isinstance(last, LoopNode):
            return self.for_stmt(last, ctx)
        owned = {ref for node in prefix for ref in getattr(node, "sync", ())}
        body = list(last.body)
        while body and isinstance(body[-1], SyncNode) and body[-1].name == "reduction" \
                and body[-1].id in owned:
            body.pop()
        if isinstance(last, SyncNode) and last.name == "atomic":
            if len(body) != 1 or not isinstance(body[0], AssignNode):
                raise self.fail(last, "atomic 的区域必须恰好是一条赋值")
            return self.statement(body[0], ctx)
        return Block(tuple(self.region(body, ctx)))

    # ---- 指令 ----

    def directive(self, prefix: List[Node], exts: List[ExtensionNode]) -> Optional[Directive]:
        if self.language == OPENMP:
            constructs = self.omp_constructs(prefix)
            if constructs not in OMP_COMBINATIONS:
                return None
        else:
            constructs = self.acc_constructs(prefix)
            if constructs not in ACC_COMBINATIONS:
                return None
        clauses = self.clauses(prefix, constructs)
        clauses.sort(key=lambda c: _CLAUSE_ORDER.index(c.name))
        clauses.extend(self.extension_clauses(exts))
        return Directive(self.language, constructs, tuple(clauses))

    def omp_constructs(self, prefix: List[Node]) -> Tuple[str, ...]:
        loop = next((n for n in prefix if isinstance(n, LoopNode)), None)
        words: List[str] = []
        for node in prefix:
            if isinstance(node, TaskNode):
                if node.kind == "remote":
                    raise self.fail(node, "remote task")
                words.append("target" if node.kind == "offload" else "task")
            elif isinstance(node, DataRegionNode):
                words.extend(("target", "data"))
            elif isinstance(node, SpmdNode):
                teams = node.num_teams is not None or (
                    loop is not None and loop.parallel.kind == "worksharing"
                    and (loop.parallel.distribute or "units") != "units")
                words.append("teams" if teams else "parallel")
            elif isinstance(node, LoopNode):
                parallel = node.parallel
                if parallel.kind == "worksharing":
                    words.extend(_OMP_LOOP_WORDS.get(parallel.distribute or "units", ("for",)))
                else:
                    words.append(parallel.kind)
            elif isinstance(node, SyncNode):
                self.require(node.name, node)
                words.append(node.name)
        return tuple(words)

    def acc_constructs(self, prefix: List[Node]) -> Tuple[str, ...]:
        kinds = [type(n) for n in prefix]
        if kinds == [DataRegionNode]:
            return ("data",)
        if kinds[:2] == [TaskNode, SpmdNode]:
            if prefix[0].kind != "offload":
                raise self.fail(prefix[0], f"{prefix[0].kind} task")
            return ("parallel",) if len(prefix) == 2 else ("parallel", "loop")
        if kinds == [LoopNode]:
            return ("loop",)
        head = prefix[0]
        if isinstance(head, TaskNode):
            raise self.fail(head, f"{head.kind} task（OpenACC 只有 parallel 区域）")
        if isinstance(head, SyncNode):
            raise self.fail(head, head.name)
        return ()

    def clauses(self, prefix: List[Node], constructs: Tuple[str, ...]) -> List[Clause]:
        omp = self.language == OPENMP
        task = next((n for n in prefix if isinstance(n, TaskNode)), None)
        spmd = next((n for n in prefix if isinstance(n, SpmdNode)), None)
        loop = next((n for n in prefix if isinstance(n, LoopNode)), None)
        sync = next((n for n in prefix if isinstance(n, SyncNode)), None)
        clauses: List[Clause] = []

        if sync is not None and sync.name == "critical" and sync.lock is not None:
            clauses.append(Clause("critical", None, (Ident(sync.lock),), True))
        if task is not None:
            clauses.extend(self.task_clauses(task))
        if spmd is not None:
            if spmd.num_teams is not None:
                clauses.append(Clause("num_teams" if omp else "num_gangs", None, (spmd.num_teams,), True))
            if spmd.num_units is not None:
                if omp:
                    name = "num_threads" if "parallel" in constructs else "thread_limit"
                else:
                    name = "num_workers"
                clauses.append(Clause(name, None, (spmd.num_units,), True))
        if loop is not None:
            clauses.extend(self.loop_clauses(loop, constructs))
        for node in prefix:
            clauses.extend(self.data_clauses(node))
            for ref in getattr(node, "sync", ()):
                red = self.index.get(ref)
                if isinstance(red, SyncNode) and red.name == "reduction":
                    self.require("reduction", red)
                    clauses.append(Clause("reduction", red.operation,
                                          tuple(Ident(s) for s in red.data), True))
        return clauses

    def task_clauses(self, task: TaskNode) -> List[Clause]:
        clauses: List[Clause] = []
        if task.policy is not None:
            raise self.fail(task, f"policy({task.policy})")
        if task.kind == "offload":
            if task.device != "nvptx":
                raise self.fail(task, f"设备 {task.device}")
            if task.device_id:
                self.require("device-id", task)
                clauses.append(Clause("device", None, (IntLit(task.device_id),), True))
        for depend in task.depend:
            self.require("depend", task)
            clauses.append(Clause("depend", depend.mode, (depend.target,), True))
        if task.is_async:
            if task.kind != "offload":
                raise self.fail(task, "异步的普通 task")
            self.require("async-offload", task)
            clauses.append(Clause("nowait") if self.language == OPENMP else Clause("async"))
        return clauses

    def loop_clauses(self, loop: LoopNode, constructs: Tuple[str, ...]) -> List[Clause]:
        parallel = loop.parallel
        clauses: List[Clause] = []
        self.require(parallel.kind, loop)
        if self.language == OPENACC:
            if parallel.kind == "simd":
                clauses.append(Clause("vector"))
            else:
                words = _ACC_LOOP_WORDS.get(parallel.distribute or "units", ())
                clauses.extend(Clause(word) for word in words)
        if parallel.schedule is not None:
            self.require("schedule", loop)
            name = "schedule" if "for" in constructs else "dist_schedule"
            args = (Ident(parallel.schedule),) + ((parallel.chunk,) if parallel.chunk is not None else ())
            clauses.append(Clause(name, None, args, True))
        if loop.collapse > 1:
            self.require("collapse", loop)
            clauses.append(Clause("collapse", None, (IntLit(loop.collapse),), True))
        for name in ("simdlen", "grainsize", "num_tasks"):
            value = getattr(parallel, name)
            if value is not None:
                self.require(name, loop)
                clauses.append(Clause(name, None, (value,), True))
        if parallel.nowait:
            self.require("nowait-loop", loop)
            clauses.append(Clause("nowait"))
        return clauses

    def data_clauses(self, node: Node) -> List[Clause]:
        if not isinstance(node, (SpmdNode, LoopNode, TaskNode, DataRegionNode)):
            return []
        grouped: Dict[Tuple[str, Optional[str]], List] = {}
        for item in node.data:
            if item.memcpy is not None:
                raise self.fail(node, f"{item.symbol} 的 memcpy 属性")
            if item.sharing is not None:
                self.require(item.sharing.value, node)
                grouped.setdefault((item.sharing.value, None), []).append(Ident(item.symbol))
            arg = Ident(item.symbol)
            if item.distribution is not None:
                dist = item.distribution
                if dist.pattern != "block" or dist.unit_id is not None or item.mapping is None:
                    raise self.fail(node, f"{item.symbol} 的 distribution")
                arg = Index(item.symbol, tuple(dist.section))
            if item.mapping is not None:
                self.require("map", node)
                if item.mapping.mapper is not None:
                    raise self.fail(node, f"{item.symbol} 的 mapper")
                if item.mapping.value == "none":
                    raise self.fail(node, f"{item.symbol} 的显式 none 映射")
                if self.language == OPENMP:
                    key = ("map", _MAP_MODIFIERS[item.mapping.value])
                else:
                    key = (_ACC_MAPPINGS[item.mapping.value], None)
                grouped.setdefault(key, []).append(arg)
            if item.allocator is not None:
                self.require("allocate", node)
                allocator = _OMP_ALLOCATOR_NAMES.get(item.allocator, item.allocator)
                grouped.setdefault(("allocate", allocator), []).append(Ident(item.symbol))
        return [Clause(name, modifier, tuple(args), True) for (name, modifier), args in grouped.items()]

    def extension_clauses(self, exts: List[ExtensionNode]) -> List[Clause]:
        clauses = []
        for ext in exts:
            if len(ext.entries) != 1:
                raise self.fail(ext, "多项扩展")
            name, value = ext.entries[0]
            if value is not None and not isinstance(value, str):
                raise self.fail(ext, f"扩展项 {name} 的取值不是原文")
            clauses.append(Clause(name, None, (), value is not None, True, value or ""))
        return clauses


def _unparse(module: UpirModule, language: str) -> str:
    stripped = strip_analysis(module)
    text = _Unparser(language, stripped).program()
    if not text:
        return text
    try:
        rebuilt = build_upir(parse_kernel_source(text, file=f"<{language}>"))
    except UpircError as e:
        raise RoundTripError(f"{LANGUAGE_NAMES[language]} 输出无法重新构建: {e.message}")
    if print_upir(rebuilt, validate=False) != print_upir(stripped, validate=False):
        raise RoundTripError(f"{LANGUAGE_NAMES[language]} 输出重新构建后与原模块不一致")
    logger.info(f"反解析为 {LANGUAGE_NAMES[language]}: {len(text.splitlines())} 行")
    return text


def unparse_to_openmp(module: UpirModule) -> str:
    """
    把 UPIR 模块写回带 OpenMP 指令的内核语言源码

    Args:
        module: UPIR 模块（可以已经做过分析）

    Returns:
        源码文本；重新解析构建后与去掉分析结果的模块打印一致

    Raises:
        UnrepresentableError: 模块含有 OpenMP 无法表达的节点
        RoundTripError: 输出重新构建后与原模块不一致
    """
    return _unparse(module, OPENMP)


def unparse_to_openacc(module: UpirModule) -> str:
    """把 UPIR 模块写回带 OpenACC 指令的内核语言源码"""
    return _unparse(module, OPENACC)
