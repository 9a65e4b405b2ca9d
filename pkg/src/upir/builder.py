"""
从带指令的 Program 构建 UPIR

OpenMP、OpenACC 和 CUDA 启动按同一套规则映射到 task / spmd / loop / sync 节点，
语义相同的输入得到相同的 UPIR。
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

from ..frontend.ast_nodes import (
    Annotated, Assign, BinOp, Block, Call, Clause, Decl, Directive, DirectiveStmt, For, Ident,
    If, Index, IntLit, Neg, Program, Return
)
from ..frontend.c_printer import format_expr
from ..frontend.kernel_parser import analyze_canonical_loop
from ..utils.errors import NonCanonicalLoopError, UpirBuildError
from .nodes import (
    ELEMENT_TYPES, AssignNode, Attribute, CallNode, DataItem, DataRegionNode, DataUpdateNode,
    DeclNode, Depend, Distribution, ExtensionNode, IfNode, LoopNode, LoopParallel, Node,
    ReturnNode, SpmdNode, SyncNode, TaskNode, UpirFunction, UpirModule, UpirParam
)
from .traversal import IdAllocator, canonicalize
from .validator import check_upir

logger = logging.getLogger(__name__)

# 映射子句 -> mapping 属性；map 的属性来自修饰符
MAPPING_CLAUSES = {"map": None, "copyin": "to", "copyout": "from", "copy": "tofrom", "create": "allocate"}
MAP_MODIFIERS = {None: "tofrom", "to": "to", "from": "from", "tofrom": "tofrom", "alloc": "allocate"}
SHARING_CLAUSES = ("shared", "private", "firstprivate", "lastprivate")
OMP_ALLOCATORS = {"omp_large_cap_mem_alloc": ("large_cap_mem_alloc", "large_cap_mem_dealloc")}
DEFAULT_ALLOCATORS = (None, "omp_default_mem_alloc")
NORMALIZED_SUFFIX = "__n"


def clause_home(name: str, kinds: Sequence[str]) -> int:
    """
    组合指令产生的节点链中，某个数据子句落在哪个节点上

    Args:
        name: 子句名
        kinds: 节点链从外到内的类别（task、data、spmd、loop、sync）

    Returns:
        节点链中的下标
    """
    def first(*wanted) -> Optional[int]:
        for kind in wanted:
            if kind in kinds:
                return list(kinds).index(kind)
        return None

    innermost = len(kinds) - 1
    if name in MAPPING_CLAUSES or name == "depend":
        home = first("task", "data")
    elif name == "shared":
        home = first("spmd", "task")
    elif name == "reduction":
        home = first("loop", "spmd")
    else:
        home = None
    return innermost if home is None else home


@dataclass(frozen=True)
class BuildContext:
    gpu: bool = False
    remote: bool = False
    spmd_depth: int = 0

    def targets(self) -> List[str]:
        if self.gpu:
            return ["gpu"]
        if self.remote:
            return ["cluster"]
        return ["cpu"]

    def enter(self, node: Node) -> "BuildContext":
        if isinstance(node, TaskNode) and node.kind == "offload":
            return replace(self, gpu=True)
        if isinstance(node, TaskNode) and node.kind == "remote":
            return replace(self, remote=True)
        if isinstance(node, SpmdNode):
            return replace(self, spmd_depth=self.spmd_depth + 1)
        return self


def _add(a, b):
    if isinstance(a, IntLit) and isinstance(b, IntLit):
        return IntLit(a.value + b.value)
    if b == IntLit(0):
        return a
    if isinstance(a, BinOp) and a.op == "-" and isinstance(b, IntLit) and a.rhs == b:
        return a.lhs
    return BinOp("+", a, b)


def _sub(a, b):
    if isinstance(a, IntLit) and isinstance(b, IntLit):
        return IntLit(a.value - b.value)
    if b == IntLit(0):
        return a
    return BinOp("-", a, b)


def _mul(a, b):
    if b == IntLit(1):
        return a
    return BinOp("*", a, b)


def _negate(expr):
    if isinstance(expr, IntLit):
        return IntLit(-expr.value)
    if isinstance(expr, BinOp) and expr.op == "-" and expr.lhs == IntLit(0):
        return expr.rhs
    if isinstance(expr, Neg):
        return expr.operand
    return Neg(expr)


def _const_int(expr, what: str, directive: Directive) -> int:
    if not isinstance(expr, IntLit):
        raise UpirBuildError(f"{what} 必须是整数常量", directive.pos)
    return expr.value


class UpirBuilder:
    """按构造映射规则把一个 Program 翻译成 UpirModule"""

    def __init__(self, program: Program):
        self.program = program
        self.next_id = IdAllocator()

    def new(self, cls, **fields):
        return cls(id=self.next_id(), **fields)

    # ---- 顶层 ----

    def build(self) -> UpirModule:
        module = UpirModule([self.function(fn) for fn in self.program.functions])
        check_upir(module)
        return canonicalize(module)

    def function(self, fn) -> UpirFunction:
        params = [UpirParam(p.name, ELEMENT_TYPES[p.ctype], tuple(p.dims)) for p in fn.params]
        return_type = None if fn.return_type == "void" else ELEMENT_TYPES[fn.return_type]
        body = self.region(fn.body, BuildContext())
        logger.debug(f"构建函数 @{fn.name}: {len(body)} 个顶层节点")
        return UpirFunction(fn.name, params, return_type, fn.is_kernel, body)

    # ---- 语句 ----

    def region(self, stmt, ctx: BuildContext) -> List[Node]:
        if isinstance(stmt, Block):
            nodes: List[Node] = []
            for s in stmt.stmts:
                nodes.extend(self.statement(s, ctx))
            return nodes
        return self.statement(stmt, ctx)

    def statement(self, stmt, ctx: BuildContext) -> List[Node]:
        if isinstance(stmt, Decl):
            return [self.new(DeclNode, name=stmt.name, type=ELEMENT_TYPES[stmt.ctype], init=stmt.init)]
        if isinstance(stmt, Assign):
            return [self.new(AssignNode, target=stmt.target, value=stmt.value)]
        if isinstance(stmt, For):
            return [self.loop(stmt, ctx)]
        if isinstance(stmt, If):
            orelse = self.region(stmt.orelse, ctx) if stmt.orelse is not None else None
            return [self.new(IfNode, cond=stmt.cond, then=self.region(stmt.then, ctx), orelse=orelse)]
        if isinstance(stmt, Block):
            return self.region(stmt, ctx)
        if isinstance(stmt, Call):
            return [self.new(CallNode, name=stmt.name, args=list(stmt.args))]
        if isinstance(stmt, Return):
            return [self.new(ReturnNode, value=stmt.value)]
        if isinstance(stmt, DirectiveStmt):
            return self.standalone(stmt.directive)
        if isinstance(stmt, Annotated):
            return self.annotated(stmt.directive, stmt.stmt, ctx)
        raise UpirBuildError(f"无法构建的语句: {type(stmt).__name__}", getattr(stmt, "pos", None))

    def loop(self, stmt: For, ctx: BuildContext, parallel: Optional[LoopParallel] = None,
             collapse: int = 1) -> LoopNode:
        """
        把规范 for 循环变成 LoopNode

        `<=` 上界加 1；递减循环改成在新的归纳变量上从 0 递增，循环体开头还原原变量。
        """
        try:
            canonical = analyze_canonical_loop(stmt)
        except NonCanonicalLoopError as e:
            raise UpirBuildError(e.message, e.position)
        var, lower, bound, step = canonical.var, canonical.lower, canonical.bound, canonical.step
        prologue: List[Node] = []
        if canonical.op in ("<", "<="):
            upper = bound if canonical.op == "<" else _add(bound, IntLit(1))
            node = self.new(LoopNode, var=var, lower=lower, upper=upper, step=step, collapse=collapse)
        else:
            magnitude = _negate(step)
            span = _sub(lower, bound)
            if canonical.op == ">=":
                span = _add(span, IntLit(1))
            if magnitude == IntLit(1):
                count = span
            else:
                count = BinOp("/", _add(span, _sub(magnitude, IntLit(1))), magnitude)
            normalized = var + NORMALIZED_SUFFIX
            node = self.new(LoopNode, var=normalized, lower=IntLit(0), upper=count, step=IntLit(1),
                            collapse=collapse)
            prologue.append(self.new(DeclNode, name=var, type="i32",
                                     init=_sub(lower, _mul(Ident(normalized), magnitude))))
            logger.debug(f"递减循环 {var} 规范化为 {normalized}")
        node.parallel = parallel
        node.body = prologue + self.region(stmt.body, ctx)
        return node

    # ---- 指令 ----

    def annotated(self, directive: Directive, stmt, ctx: BuildContext) -> List[Node]:
        if directive.language == "cuda-launch":
            return self.cuda_launch(directive, stmt, ctx)
        if directive.language == "openmp":
            return self.openmp(directive, stmt, ctx)
        return self.openacc(directive, stmt, ctx)

    def cuda_launch(self, directive: Directive, call: Call, ctx: BuildContext) -> List[Node]:
        grid, block = directive.launch_config
        inner = self.new(CallNode, name=call.name, args=list(call.args))
        spmd = self.new(SpmdNode, targets=["gpu"], num_teams=grid, num_units=block, body=[inner])
        task = self.new(TaskNode, kind="offload", device="nvptx", device_id=0, body=[spmd])
        logger.debug(f"CUDA 启动 {call.name} 映射为 offload task + spmd")
        return [task]

    def openmp(self, directive: Directive, stmt, ctx: BuildContext) -> List[Node]:
        c = directive.constructs
        chain: List[Node] = []
        loop_parallel: Optional[LoopParallel] = None
        if c == ("target", "data"):
            chain.append(self.new(DataRegionNode))
        else:
            if "target" in c:
                chain.append(self.new(TaskNode, kind="offload", device="nvptx", device_id=0))
            if "task" in c:
                chain.append(self.new(TaskNode, kind="plain"))
            if "teams" in c or "parallel" in c:
                chain.append(self.new(SpmdNode))
            if c[0] in ("critical", "single", "atomic"):
                sync = self.new(SyncNode, name=c[0])
                construct_arg = directive.clause("critical")
                if construct_arg is not None:
                    sync.lock = construct_arg.args[0].name
                chain.append(sync)
            if "taskloop" in c:
                loop_parallel = LoopParallel("taskloop")
            elif "distribute" in c or "for" in c:
                if "distribute" in c and "for" in c:
                    target = "teams,units"
                else:
                    target = "teams" if "distribute" in c else "units"
                loop_parallel = LoopParallel("worksharing", distribute=target)
                if "simd" in c:
                    logger.warning(f"{directive.pos}: 循环同时有 worksharing 和 simd，保留 worksharing")
            elif "simd" in c:
                loop_parallel = LoopParallel("simd")
        has_loop = loop_parallel is not None
        return self.assemble(directive, stmt, ctx, chain, has_loop, loop_parallel)

    def openacc(self, directive: Directive, stmt, ctx: BuildContext) -> List[Node]:
        c = directive.constructs
        chain: List[Node] = []
        loop_parallel: Optional[LoopParallel] = None
        has_loop = "loop" in c
        if c == ("data",):
            chain.append(self.new(DataRegionNode))
        if "parallel" in c:
            chain.append(self.new(TaskNode, kind="offload", device="nvptx", device_id=0))
            chain.append(self.new(SpmdNode))
        if has_loop:
            gang, worker, vector, seq = (directive.clause(n) is not None
                                         for n in ("gang", "worker", "vector", "seq"))
            if seq:
                loop_parallel = None
            elif gang or worker:
                target = "teams,units" if gang and worker else ("teams" if gang else "units")
                loop_parallel = LoopParallel("worksharing", distribute=target)
                if vector:
                    logger.warning(f"{directive.pos}: vector 与 gang/worker 同时出现，保留 worksharing")
            elif vector:
                loop_parallel = LoopParallel("simd")
            else:
                loop_parallel = LoopParallel("worksharing", distribute="units")
        return self.assemble(directive, stmt, ctx, chain, has_loop, loop_parallel)

    def assemble(self, directive: Directive, stmt, ctx: BuildContext, chain: List[Node],
                 has_loop: bool, loop_parallel: Optional[LoopParallel]) -> List[Node]:
        """把节点链串起来，处理子句，返回要放进外层区域的节点"""
        inner = ctx
        for node in chain:
            if isinstance(node, SpmdNode):
                node.targets = inner.targets()
            inner = inner.enter(node)

        loop: Optional[LoopNode] = None
        if has_loop:
            if loop_parallel is not None and loop_parallel.kind == "worksharing" and inner.spmd_depth == 0:
                raise UpirBuildError(f"worksharing 循环必须位于 spmd 区域内: {directive.constructs}",
                                     directive.pos)
            collapse_clause = directive.clause("collapse")
            collapse = collapse_clause.args[0].value if collapse_clause is not None else 1
            loop = self.loop(stmt, inner, loop_parallel, collapse)
            if collapse > 1 and _nest_depth(loop) < collapse:
                raise UpirBuildError(f"collapse({collapse}) 的循环在规范化后不再完美嵌套", directive.pos)
            chain.append(loop)
            body: List[Node] = []
        else:
            body = self.region(stmt, inner)

        kinds = [_kind(node) for node in chain]
        before: List[Node] = []
        reductions: List[SyncNode] = []
        self.clauses(directive, chain, kinds, before, reductions)

        # 串联：每个节点的区域只包含下一个节点
        after: List[Node] = []
        for index, node in enumerate(chain):
            if node is loop:
                continue
            nxt = chain[index + 1] if index + 1 < len(chain) else None
            if nxt is None:
                node.body = body
            elif nxt is loop:
                node.body = [loop] + [r for r in reductions if r.id in loop.sync]
            else:
                node.body = [nxt]
        for red in reductions:
            owner = next(n for n in chain if red.id in getattr(n, "sync", ()))
            if owner is not loop:
                owner.body.append(red)
            elif chain[0] is loop:
                after.append(red)
        return before + [chain[0]] + after

    # ---- 子句 ----

    def clauses(self, directive: Directive, chain: List[Node], kinds: List[str],
                before: List[Node], reductions: List[SyncNode]) -> None:
        task = next((n for n in chain if isinstance(n, TaskNode)), None)
        spmd = next((n for n in chain if isinstance(n, SpmdNode)), None)
        loop = next((n for n in chain if isinstance(n, LoopNode)), None)
        parallel = loop.parallel if loop is not None else None
        units_from = None
        allocates: List[Clause] = []

        for clause in directive.clauses:
            name = clause.name
            if name in directive.constructs:
                continue
            if clause.extension:
                value = clause.raw if clause.has_parens else None
                before.append(self.new(ExtensionNode, attach=chain[0].id, entries=[(name, value)]))
            elif name in ("num_teams", "num_gangs"):
                spmd.num_teams = clause.args[0]
            elif name in ("num_threads", "thread_limit", "num_workers"):
                if units_from is not None:
                    raise UpirBuildError(f"子句 {units_from} 与 {name} 矛盾", directive.pos)
                units_from = name
                spmd.num_units = clause.args[0]
            elif name == "vector_length":
                before.append(self.new(ExtensionNode, attach=chain[0].id,
                                       entries=[(name, format_expr(clause.args[0]))]))
            elif name == "device":
                self._device_clause(directive, clause, task)
            elif name in ("nowait", "async"):
                self._async_clause(directive, clause, task, parallel)
            elif name == "wait":
                if clause.args:
                    logger.warning(f"{directive.pos}: wait 子句的队列参数被忽略")
                before.insert(0, self.new(SyncNode, name="taskwait"))
            elif name == "depend":
                task.depend.extend(Depend(clause.modifier, arg) for arg in clause.args)
            elif name in MAPPING_CLAUSES:
                home = chain[clause_home(name, kinds)]
                value = MAP_MODIFIERS[clause.modifier] if name == "map" else MAPPING_CLAUSES[name]
                for arg in clause.args:
                    self._set_mapping(directive, self._item(home, arg, directive), value, arg)
            elif name in SHARING_CLAUSES:
                home = chain[clause_home(name, kinds)]
                for arg in clause.args:
                    item = self._item(home, arg, directive)
                    if item is None:
                        continue
                    if item.sharing is not None and item.sharing.value != name:
                        raise UpirBuildError(
                            f"符号 {item.symbol} 的数据共享属性矛盾: {item.sharing.value} 与 {name}",
                            directive.pos
                        )
                    item.sharing = Attribute(name, "explicit")
            elif name == "reduction":
                home = chain[clause_home(name, kinds)]
                red = self.new(SyncNode, name="reduction", operation=clause.modifier,
                               data=[arg.name for arg in clause.args])
                home.sync.append(red.id)
                reductions.append(red)
            elif name == "allocate":
                allocates.append(clause)
            elif name in ("schedule", "dist_schedule"):
                if name == "dist_schedule" and directive.clause("schedule") is not None:
                    logger.warning(f"{directive.pos}: 同时有 schedule 和 dist_schedule，忽略 dist_schedule")
                    continue
                parallel.schedule = clause.args[0].name
                parallel.chunk = clause.args[1] if len(clause.args) > 1 else None
            elif name == "collapse":
                pass
            elif name == "simdlen":
                if parallel.kind == "simd":
                    parallel.simdlen = clause.args[0]
                else:
                    logger.warning(f"{directive.pos}: worksharing 循环忽略 simdlen")
            elif name in ("grainsize", "num_tasks"):
                setattr(parallel, name, clause.args[0])
            elif name in ("gang", "worker", "vector", "seq", "independent"):
                pass
            else:
                logger.warning(f"{directive.pos}: 子句 {name} 在此处没有对应的 UPIR 表示，已忽略")

        if parallel is not None and parallel.grainsize is not None and parallel.num_tasks is not None:
            logger.warning(f"{directive.pos}: grainsize 与 num_tasks 同时出现，以 num_tasks 为准")
            parallel.grainsize = None
        for clause in allocates:
            self._allocate_clause(directive, clause, chain)

    def _device_clause(self, directive, clause, task) -> None:
        if task is not None and task.kind == "offload":
            task.device_id = _const_int(clause.args[0], "device 编号", directive)
        else:
            logger.warning(f"{directive.pos}: 数据区域上的 device 子句被忽略")

    def _async_clause(self, directive, clause, task, parallel) -> None:
        if task is not None and (task.kind == "offload" or clause.name == "async"):
            task.is_async = True
            if clause.args:
                logger.warning(f"{directive.pos}: async 的队列编号被忽略")
        elif parallel is not None and parallel.kind == "worksharing":
            parallel.nowait = True
        else:
            logger.warning(f"{directive.pos}: 子句 {clause.name} 在 {' '.join(directive.constructs)} 上被忽略")

    def _item(self, node: Node, arg, directive: Directive) -> Optional[DataItem]:
        data = getattr(node, "data", None)
        if not isinstance(node, (SpmdNode, LoopNode, TaskNode, DataRegionNode)):
            logger.warning(f"{directive.pos}: {' '.join(directive.constructs)} 不带数据属性，子句被忽略")
            return None
        for item in data:
            if item.symbol == arg.name:
                return item
        item = DataItem(arg.name)
        data.append(item)
        return item

    @staticmethod
    def _set_mapping(directive: Directive, item: Optional[DataItem], value: str, arg) -> None:
        if item is None:
            return
        if item.mapping is not None and item.mapping.value != value:
            raise UpirBuildError(
                f"符号 {item.symbol} 的映射属性矛盾: {item.mapping.value} 与 {value}", directive.pos
            )
        item.mapping = Attribute(value, "explicit")
        if isinstance(arg, Index):
            item.distribution = Distribution("block", None, tuple(arg.indices))

    def _allocate_clause(self, directive: Directive, clause: Clause, chain: List[Node]) -> None:
        allocator = clause.modifier
        if allocator in DEFAULT_ALLOCATORS:
            return
        alloc, dealloc = OMP_ALLOCATORS.get(allocator, (allocator, None))
        for arg in clause.args:
            holder = next((n for n in reversed(chain)
                           if any(i.symbol == arg.name for i in getattr(n, "data", []) or []
                                  if isinstance(i, DataItem))), chain[-1])
            item = self._item(holder, arg, directive)
            if item is not None:
                item.allocator = alloc
                item.deallocator = dealloc

    def standalone(self, directive: Directive) -> List[Node]:
        c = directive.constructs
        if c == ("barrier",):
            return [self.new(SyncNode, name="barrier")]
        if c in (("taskwait",), ("wait",)):
            for clause in directive.clauses:
                logger.warning(f"{directive.pos}: {c[0]} 的子句/参数 {clause.name} 被忽略")
            return [self.new(SyncNode, name="taskwait")]
        # target update / acc update
        device = "nvptx:0"
        depend: List[Depend] = []
        before: List[Node] = []
        updates: List[DataUpdateNode] = []
        for clause in directive.clauses:
            if clause.name == "device" and directive.language == "openmp":
                device = f"nvptx:{_const_int(clause.args[0], 'device 编号', directive)}"
            elif clause.name == "depend":
                depend.extend(Depend(clause.modifier, arg) for arg in clause.args)
            elif clause.name in ("to", "device"):
                updates.append(self.new(DataUpdateNode, items=list(clause.args), direction="forward"))
            elif clause.name in ("from", "host", "self"):
                updates.append(self.new(DataUpdateNode, items=list(clause.args), direction="backward"))
            elif clause.name == "wait":
                before.append(self.new(SyncNode, name="taskwait"))
            else:
                logger.warning(f"{directive.pos}: update 上的子句 {clause.name} 被忽略")
        if not updates:
            raise UpirBuildError("update 指令至少需要一个 to/from/device/host 子句", directive.pos)
        for update in updates:
            update.device = device
            update.depend = list(depend)
        return before + updates


def _kind(node: Node) -> str:
    if isinstance(node, TaskNode):
        return "task"
    if isinstance(node, DataRegionNode):
        return "data"
    if isinstance(node, SpmdNode):
        return "spmd"
    if isinstance(node, LoopNode):
        return "loop"
    return "sync"


def _nest_depth(loop: LoopNode) -> int:
    depth = 1
    body = loop.body
    while len(body) == 1 and isinstance(body[0], LoopNode):
        depth += 1
        body = body[0].body
    return depth


def build_upir(program: Program) -> UpirModule:
    """
    按构造映射规则构建 UPIR

    Args:
        program: 解析并附着了指令的程序

    Returns:
        规范化后的 UpirModule
    """
    module = UpirBuilder(program).build()
    logger.info(f"构建 UPIR 完成: {len(module.functions)} 个函数")
    return module
