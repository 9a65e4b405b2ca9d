"""
降级到运行时形式

把 UPIR 中的并行结构外提（outline）成独立函数，原位置换成运行时原语调用：
spmd -> fork_teams/fork_units，task -> launch_task，worksharing 循环 -> dispatch_loop，
同步节点 -> barrier/reduce/taskwait/sync，数据区域 -> map_enter/map_exit。
解释器的 replay 按同样的原语执行，输出应与直接解释 UPIR 一致。
"""

import copy
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from ..analysis.data_attributes import PRIVATE_SHARINGS, infer_data_attributes, reduction_symbols
from ..analysis.implicit_sync import materialize_implicit_sync
from ..frontend.ast_nodes import (
    INTRINSICS, BinOp, FloatLit, Ident, Index, Intrinsic, IntLit, Neg, expr_uses_intrinsic
)
from ..upir.nodes import (
    CallNode, DataItem, DataMovementNode, DataRegionNode, DataUpdateNode, Depend, ExtensionNode,
    IfNode, LoopNode, LoopParallel, MmAllocNode, MmDeallocNode, Node, Region, SpmdNode, SyncNode,
    TaskNode, UpirFunction, UpirModule
)
from ..upir.printer import (
    UpirPrinter, format_data_item, format_parallel, format_symbol, format_type, format_upir_expr
)
from ..upir.traversal import canonicalize, child_regions, node_index, referenced_ids, references, walk
from ..utils.errors import LoweringError
from .loop_collapse import collapse_module

logger = logging.getLogger(__name__)

BY_VALUE = "by-value"
BY_REFERENCE = "by-reference"
HOST_SPACE = "host"
DEFAULT_DEVICE_SPACE = "device:nvptx:0"

_EXPR_TYPES = (IntLit, FloatLit, Ident, Index, BinOp, Neg, Intrinsic)


def device_space(space: str) -> str:
    """TaskNode.space（如 nvptx:0）对应的内存空间名"""
    return f"device:{space}"


# ---- 捕获环境 ----

@dataclass(frozen=True)
class ReductionRef:
    """被私有化的 reduction 变量：同步节点、运算符和合并范围（team / group / leaders）"""
    sync_id: int
    operation: str
    scope: str


@dataclass(frozen=True)
class Capture:
    symbol: str
    mode: str
    sharing: str
    mapping: str = "none"
    reduction: Optional[ReductionRef] = None

    def describe(self) -> str:
        return f"{format_symbol(self.symbol)}: {self.mode}"


def reduction_scope(node: Node) -> str:
    """reduction 的合并范围：spmd 上的覆盖整个组，循环上的取决于 distribute"""
    if isinstance(node, SpmdNode):
        return "group"
    distribute = node.parallel.distribute if getattr(node, "parallel", None) else None
    if distribute == "teams":
        return "leaders"
    if distribute == "teams,units":
        return "group"
    return "team"


def is_worksharing(node: Node) -> bool:
    return isinstance(node, LoopNode) and node.parallel is not None \
        and node.parallel.kind == "worksharing"


def capture_environment(node: Node, index: Dict[int, Node]) -> List[Capture]:
    """
    计算外提函数的捕获环境

    spmd 和 task 按 sharing 决定：shared 按引用，其余按值。
    worksharing 循环只私有化归纳变量、reduction 变量和显式声明为私有的符号，
    其余（包括从外层继承来的私有属性）按引用，指向外层已经私有化的存储。
    其他循环除归纳变量外全部按引用。

    Args:
        node: spmd / task / loop 节点
        index: id -> 节点，用于查 reduction 同步

    Returns:
        按符号排序的捕获列表
    """
    reductions = reduction_symbols(node, index)
    scope = reduction_scope(node)
    captures: List[Capture] = []
    for item in sorted(getattr(node, "data", ()), key=lambda i: i.symbol):
        sharing = item.sharing.value if item.sharing is not None else "shared"
        mapping = item.mapping.value if item.mapping is not None else "none"
        reduction = None
        if item.symbol in reductions:
            sync = index[reductions[item.symbol]]
            reduction = ReductionRef(sync.id, sync.operation or "+", scope)
        if isinstance(node, LoopNode):
            if is_worksharing(node):
                explicit = item.sharing is not None and item.sharing.visibility == "explicit" \
                    and sharing in PRIVATE_SHARINGS
                by_value = reduction is not None or item.symbol == node.var or explicit
            else:
                by_value = item.symbol == node.var
        else:
            by_value = reduction is not None or sharing in PRIVATE_SHARINGS
        captures.append(Capture(item.symbol, BY_VALUE if by_value else BY_REFERENCE,
                                sharing, mapping, reduction))
    return captures


def mapped_items(data: List[DataItem]) -> Tuple[DataItem, ...]:
    return tuple(item for item in data
                 if item.mapping is not None and item.mapping.value != "none")


def _node_exprs(node: Node) -> Iterator:
    for f in dataclasses.fields(node):
        if f.name in ("body", "then", "orelse", "data"):
            continue
        value = getattr(node, f.name)
        for v in (value if isinstance(value, list) else [value]):
            if isinstance(v, _EXPR_TYPES):
                yield v


def uses_unit_intrinsics(region: Region, module: UpirModule, seen: Optional[set] = None) -> bool:
    """区域（含被调函数）是否用到单元索引内建函数"""
    seen = set() if seen is None else seen
    for node in region:
        if any(expr_uses_intrinsic(e, INTRINSICS) for e in _node_exprs(node)):
            return True
        if isinstance(node, CallNode) and node.name not in seen:
            seen.add(node.name)
            callee = module.function(node.name)
            if callee is not None and uses_unit_intrinsics(callee.body, module, seen):
                return True
        if any(uses_unit_intrinsics(sub, module, seen) for sub in child_regions(node)):
            return True
    return False


# ---- 原语参数 ----

@dataclass
class ForkSpec:
    num_teams: Optional[object] = None
    num_units: Optional[object] = None
    targets: Tuple[str, ...] = ()
    unit_dependent: bool = False


@dataclass
class TaskSpec:
    kind: str = "plain"
    space: Optional[str] = None
    depend: Tuple[Depend, ...] = ()
    is_async: bool = False
    policy: Optional[str] = None


@dataclass
class LoopSpec:
    var: str
    lower: object
    upper: object
    step: object
    parallel: Optional[LoopParallel] = None


@dataclass
class MapSpec:
    """map_enter/map_exit 的数据项；bind 为真时把设备副本绑定到外提函数的环境里"""
    items: Tuple[DataItem, ...] = ()
    space: str = DEFAULT_DEVICE_SPACE
    bind: bool = False


def fork_spec(node: SpmdNode, module: UpirModule) -> ForkSpec:
    return ForkSpec(node.num_teams, node.num_units, tuple(node.targets),
                    uses_unit_intrinsics(node.body, module))


def task_spec(node: TaskNode) -> TaskSpec:
    space = device_space(node.space) if node.space is not None else None
    return TaskSpec(node.kind, space, tuple(node.depend), node.is_async, node.policy)


def loop_spec(node: LoopNode) -> LoopSpec:
    return LoopSpec(node.var, node.lower, node.upper, node.step, node.parallel)


# ---- 运行时形式 ----

@dataclass
class RuntimeCall(Node):
    """运行时原语调用；id 沿用被降级节点的 id"""
    primitive: str = ""
    fn: Optional[str] = None
    spec: object = None


@dataclass
class OutlinedFunction:
    """外提函数；env 为空的（single/critical/atomic）在调用者的环境里执行"""
    name: str
    env: List[Capture] = field(default_factory=list)
    body: Region = field(default_factory=list)


@dataclass
class RuntimeForm(UpirModule):
    outlined: Dict[str, OutlinedFunction] = field(default_factory=dict)

    def calls(self) -> List[RuntimeCall]:
        found = [n for n in walk(self) if isinstance(n, RuntimeCall)]
        for fn in self.outlined.values():
            found.extend(n for n in walk(fn.body) if isinstance(n, RuntimeCall))
        return found


_SYNC_PRIMITIVES = {"barrier": "barrier", "reduction": "reduce", "taskwait": "taskwait"}
_DIRECT_PRIMITIVES = {
    DataUpdateNode: "update", DataMovementNode: "memcpy", MmAllocNode: "alloc", MmDeallocNode: "dealloc"
}


class _Lowerer:
    def __init__(self, module: UpirModule):
        self.module = module
        self.index = node_index(module)
        self.outlined: Dict[str, OutlinedFunction] = {}
        self.function: Optional[UpirFunction] = None

    def lower(self) -> RuntimeForm:
        functions = []
        for function in self.module.functions:
            self.function = function
            functions.append(UpirFunction(function.name, copy.deepcopy(function.params),
                                          function.return_type, function.is_kernel,
                                          self.region(function.body)))
        return RuntimeForm(functions=functions, outlined=self.outlined)

    def region(self, region: Region) -> Region:
        lowered: Region = []
        for node in region:
            missing = [r for r in references(node) if r not in self.index]
            if missing:
                raise LoweringError(
                    f"节点 #{node.id} 引用了不存在的节点 {', '.join(f'#{r}' for r in missing)}"
                )
            method = getattr(self, "_" + type(node).__name__, None)
            lowered.extend(method(node) if method is not None else [copy.deepcopy(node)])
        return lowered

    def outline(self, kind: str, node: Node, env: List[Capture], body: Region) -> str:
        name = f"{self.function.name}_{kind}{node.id}"
        self.outlined[name] = OutlinedFunction(name, env, body)
        return name

    def _SpmdNode(self, node: SpmdNode) -> Region:
        env = capture_environment(node, self.index)
        fn = self.outline("spmd", node, env, self.region(node.body))
        primitive = "fork_teams" if node.num_teams is not None else "fork_units"
        return [RuntimeCall(primitive=primitive, fn=fn, spec=fork_spec(node, self.module), id=node.id)]

    def _TaskNode(self, node: TaskNode) -> Region:
        env = capture_environment(node, self.index)
        spec = task_spec(node)
        body = self.region(node.body)
        if spec.space is not None:
            maps = MapSpec(mapped_items(node.data), spec.space, bind=True)
            body = [RuntimeCall(primitive="map_enter", spec=maps, id=node.id)] + body + \
                   [RuntimeCall(primitive="map_exit", spec=maps, id=node.id)]
        fn = self.outline("task", node, env, body)
        return [RuntimeCall(primitive="launch_task", fn=fn, spec=spec, id=node.id)]

    def _DataRegionNode(self, node: DataRegionNode) -> Region:
        maps = MapSpec(mapped_items(node.data), DEFAULT_DEVICE_SPACE, bind=False)
        return [RuntimeCall(primitive="map_enter", spec=maps, id=node.id)] + self.region(node.body) + \
               [RuntimeCall(primitive="map_exit", spec=maps, id=node.id)]

    def _LoopNode(self, node: LoopNode) -> Region:
        body = self.region(node.body)
        if is_worksharing(node) or (node.parallel is not None and node.parallel.kind == "taskloop"):
            kind = "loop" if is_worksharing(node) else "taskloop"
            fn = self.outline(kind, node, capture_environment(node, self.index), body)
            primitive = "dispatch_loop" if kind == "loop" else "taskloop"
            return [RuntimeCall(primitive=primitive, fn=fn, spec=loop_spec(node), id=node.id)]
        # simd 和普通循环保持循环形式
        lowered = copy.deepcopy(node)
        lowered.body = body
        return [lowered]

    def _SyncNode(self, node: SyncNode) -> Region:
        spec = copy.deepcopy(node)
        spec.body = None
        if node.body is not None:
            fn = self.outline(node.name, node, [], self.region(node.body))
            return [RuntimeCall(primitive=node.name, fn=fn, spec=spec, id=node.id)]
        primitive = _SYNC_PRIMITIVES.get(node.name, "sync") if node.mode == "sync" else "sync"
        return [RuntimeCall(primitive=primitive, spec=spec, id=node.id)]

    def _IfNode(self, node: IfNode) -> Region:
        orelse = self.region(node.orelse) if node.orelse is not None else None
        return [IfNode(cond=node.cond, then=self.region(node.then), orelse=orelse, id=node.id)]

    def _ExtensionNode(self, node: ExtensionNode) -> Region:
        return []

    def _direct(self, node: Node) -> Region:
        return [RuntimeCall(primitive=_DIRECT_PRIMITIVES[type(node)], spec=copy.deepcopy(node), id=node.id)]

    _DataUpdateNode = _direct
    _DataMovementNode = _direct
    _MmAllocNode = _direct
    _MmDeallocNode = _direct


def prepare_module(module: UpirModule) -> UpirModule:
    """补全数据属性、物化隐式 barrier 并展开 collapse，供降级和解释共用"""
    module = materialize_implicit_sync(infer_data_attributes(module), reuse_explicit=True)
    if any(isinstance(n, LoopNode) and n.collapse > 1 for n in walk(module)):
        module = collapse_module(module)
    return module


def lower_to_runtime(module: UpirModule) -> RuntimeForm:
    """
    把 UPIR 模块降级为运行时形式

    Args:
        module: 完成分析的 UPIR 模块，输入不变

    Returns:
        RuntimeForm：改写后的函数体加上外提函数表

    Raises:
        LoweringError: 节点引用了不存在的节点
    """
    module = canonicalize(prepare_module(module))
    form = _Lowerer(module).lower()
    logger.info(f"降级完成: {len(form.outlined)} 个外提函数, {len(form.calls())} 个运行时调用")
    return form


# ---- 打印 ----

def _spec_terms(spec) -> List[Optional[str]]:
    if isinstance(spec, ForkSpec):
        return [
            f"target({', '.join(spec.targets)})" if spec.targets else None,
            f"num_teams({format_upir_expr(spec.num_teams)})" if spec.num_teams is not None else None,
            f"num_units({format_upir_expr(spec.num_units)})" if spec.num_units is not None else None,
        ]
    if isinstance(spec, TaskSpec):
        depend = ", ".join(f"{d.mode}: {format_upir_expr(d.target)}" for d in spec.depend)
        return [
            spec.kind + (f"({spec.space})" if spec.space else ""),
            f"depend({depend})" if spec.depend else None,
            f"policy({spec.policy})" if spec.policy else None,
            "async" if spec.is_async else None,
        ]
    if isinstance(spec, LoopSpec):
        terms = [f"induction({format_symbol(spec.var)})", f"lowerBound({format_upir_expr(spec.lower)})",
                 f"upperBound({format_upir_expr(spec.upper)})", f"step({format_upir_expr(spec.step)})"]
        if spec.parallel is not None:
            terms.append(format_parallel(spec.parallel))
        return terms
    if isinstance(spec, MapSpec):
        data = ", ".join(format_data_item(DataItem(i.symbol, mapping=i.mapping)) for i in spec.items)
        return [f"space({spec.space})", "bind" if spec.bind else None, f"data({data})" if data else None]
    if isinstance(spec, SyncNode):
        return [
            spec.name,
            f"async({spec.step})" if spec.mode == "async" else None,
            f"operation({spec.operation})" if spec.operation else None,
            f"data({', '.join(format_symbol(d) for d in spec.data)})" if spec.data else None,
            f"lock({format_symbol(spec.lock)})" if spec.lock else None,
        ]
    if isinstance(spec, DataUpdateNode):
        items = ", ".join(format_upir_expr(i) for i in spec.items)
        return [f"data({items})", spec.direction, f"device({spec.device})"]
    if isinstance(spec, DataMovementNode):
        return [f"dest({spec.dest_target}, {format_symbol(spec.dest_ptr)})",
                f"src({spec.src_target}, {format_symbol(spec.src_ptr)})",
                f"size({format_upir_expr(spec.size)})", spec.direction]
    if isinstance(spec, MmAllocNode):
        return [f"allocator({spec.allocator})",
                f"{format_symbol(spec.symbol)} : {format_type(spec.element_type, (spec.count,))}"]
    if isinstance(spec, MmDeallocNode):
        return [f"deallocator({spec.deallocator})", format_symbol(spec.symbol)]
    return []


class RuntimePrinter(UpirPrinter):
    """运行时形式的文本（.rtf.txt），每个原语一行"""

    def __init__(self, form: RuntimeForm):
        super().__init__(form)
        for outlined in form.outlined.values():
            self.refs |= referenced_ids(outlined.body)

    def print(self) -> str:
        self.lines = ["runtime.form {"]
        for function in self.module.functions:
            self.function(function)
        for outlined in self.module.outlined.values():
            env = ", ".join(c.describe() for c in outlined.env)
            self.emit(1, f"runtime.outlined @{outlined.name}({env}) {{")
            self.region(outlined.body, 2)
            self.emit(1, "}")
        self.lines.append("}")
        return "\n".join(self.lines) + "\n"

    def _RuntimeCall(self, node: RuntimeCall, depth: int) -> None:
        terms = _spec_terms(node.spec)
        if node.fn is not None:
            terms.append(f"fn(@{node.fn})")
        self.open(node, depth, f"runtime.{node.primitive}", terms)


def format_runtime(form: RuntimeForm) -> str:
    return RuntimePrinter(form).print()
