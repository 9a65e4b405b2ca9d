"""
UPIR 节点类型

表达式沿用前端的表达式节点（IntLit、Ident、Index、BinOp 等）。
每个节点带一个模块内唯一的整数 id，交叉引用（sync、branch、嵌套父子、扩展附着点）都按 id 指向节点。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

from ..frontend.ast_nodes import ArraySection, Expr

SPMD_TARGETS = ("cpu", "gpu", "cluster")
PARALLEL_KINDS = ("worksharing", "simd", "taskloop")
SCHEDULE_POLICIES = ("static", "dynamic", "guided", "runtime", "auto")
DISTRIBUTE_TARGETS = ("teams", "units", "teams,units")
TASK_KINDS = ("plain", "offload", "remote")
DEVICES = ("nvptx", "amd", "fpga", "host")
DEPEND_MODES = ("in", "out", "inout")
TASK_POLICIES = ("help-first", "work-first")

SHARING_PROPERTIES = ("shared", "private", "firstprivate", "lastprivate")
MAPPING_PROPERTIES = ("to", "from", "tofrom", "allocate", "none")
ACCESS_MODES = ("read-only", "write-only", "read-write")
DISTRIBUTION_PATTERNS = ("block", "cyclic", "linear", "loop")
ALLOCATORS = ("default_mem_alloc", "large_cap_mem_alloc")
DEALLOCATORS = ("default_mem_dealloc", "large_cap_mem_dealloc")
VISIBILITIES = ("implicit", "explicit")

SYNC_NAMES = ("barrier", "reduction", "taskwait", "broadcast", "allreduce", "send", "recv",
              "single", "critical", "atomic")
SYNC_STEPS = ("arrive-compute", "wait-release")
SYNC_UNIT_KINDS = ("task", "thread", "rank")
REDUCTION_OPERATIONS = ("+", "-", "*", "max", "min")
MOVEMENT_DIRECTIONS = ("forward", "backward")

ELEMENT_TYPES = {"int": "i32", "float": "f32", "double": "f64"}
C_TYPES = {v: k for k, v in ELEMENT_TYPES.items()}


# ---- 数据属性 ----

@dataclass
class Attribute:
    """带可见性的属性值（sharing / mapping）；mapper 只用于 mapping"""
    value: str
    visibility: str = "explicit"
    mapper: Optional[str] = None


@dataclass
class Distribution:
    pattern: str = "block"
    unit_id: Optional[Expr] = None
    section: Tuple[ArraySection, ...] = ()


@dataclass
class DataItem:
    """
    单个符号的数据属性记录

    六个字段为 sharing、mapping、access、distribution、allocator、deallocator，
    memcpy 可选；None 表示尚未推断。
    """
    symbol: str
    sharing: Optional[Attribute] = None
    mapping: Optional[Attribute] = None
    access: Optional[str] = None
    distribution: Optional[Distribution] = None
    allocator: Optional[str] = None
    deallocator: Optional[str] = None
    memcpy: Optional[str] = None

    def is_complete(self) -> bool:
        return None not in (self.sharing, self.mapping, self.access, self.distribution,
                            self.allocator, self.deallocator)


# ---- 节点 ----

@dataclass
class Node:
    id: int = field(default=0, kw_only=True)


Region = List[Node]


@dataclass
class SpmdNode(Node):
    targets: List[str] = field(default_factory=list)
    num_teams: Optional[Expr] = None
    num_units: Optional[Expr] = None
    data: List[DataItem] = field(default_factory=list)
    nested_parent: Optional[int] = None
    nested_child: Optional[int] = None
    nested_level: Optional[int] = None
    branch: List[int] = field(default_factory=list)
    sync: List[int] = field(default_factory=list)
    body: Region = field(default_factory=list)


@dataclass
class LoopParallel:
    """循环并行化方式，作为 LoopNode 的唯一标注"""
    kind: str = "worksharing"
    schedule: Optional[str] = None
    chunk: Optional[Expr] = None
    distribute: Optional[str] = None
    nowait: bool = False
    simdlen: Optional[Expr] = None
    grainsize: Optional[Expr] = None
    num_tasks: Optional[Expr] = None


@dataclass
class LoopNode(Node):
    """规范循环：var 取 lower, lower+step, ... 直到不小于 upper（step 为正）"""
    var: str = ""
    lower: Expr = None
    upper: Expr = None
    step: Expr = None
    data: List[DataItem] = field(default_factory=list)
    collapse: int = 1
    sync: List[int] = field(default_factory=list)
    parallel: Optional[LoopParallel] = None
    body: Region = field(default_factory=list)


@dataclass
class Depend:
    mode: str
    target: Expr


@dataclass
class TaskNode(Node):
    kind: str = "plain"
    device: Optional[str] = None
    device_id: Optional[int] = None
    depend: List[Depend] = field(default_factory=list)
    data: List[DataItem] = field(default_factory=list)
    sync: List[int] = field(default_factory=list)
    policy: Optional[str] = None
    is_async: bool = False
    body: Region = field(default_factory=list)

    @property
    def space(self) -> Optional[str]:
        if self.kind == "plain":
            return None
        return f"{self.device}:{self.device_id}"


@dataclass
class DataRegionNode(Node):
    """target data / acc data 的数据区域"""
    data: List[DataItem] = field(default_factory=list)
    body: Region = field(default_factory=list)


@dataclass
class DataMovementNode(Node):
    dest_target: str = "host"
    dest_ptr: str = ""
    src_target: str = "host"
    src_ptr: str = ""
    size: Expr = None
    direction: str = "forward"
    memcpy: Optional[str] = None
    depend: List[Depend] = field(default_factory=list)


@dataclass
class DataUpdateNode(Node):
    items: List[Expr] = field(default_factory=list)
    direction: str = "forward"
    device: str = "nvptx:0"
    memcpy: Optional[str] = None
    depend: List[Depend] = field(default_factory=list)


@dataclass
class MmAllocNode(Node):
    allocator: str = "default_mem_alloc"
    symbol: str = ""
    element_type: str = "f64"
    count: Expr = None


@dataclass
class MmDeallocNode(Node):
    deallocator: str = "default_mem_dealloc"
    symbol: str = ""


@dataclass
class SyncUnit:
    """同步参与方：kind 为 task/thread/rank，unit 为 None 时表示 '*'"""
    kind: str = "thread"
    unit: Optional[Expr] = None


@dataclass
class SyncNode(Node):
    name: str = "barrier"
    mode: str = "sync"
    step: Optional[str] = None
    primary: Optional[SyncUnit] = None
    secondary: Optional[SyncUnit] = None
    operation: Optional[str] = None
    data: List[str] = field(default_factory=list)
    lock: Optional[str] = None
    implicit: bool = False
    body: Optional[Region] = None


ExtValue = Union[None, str, Expr, List[str]]


@dataclass
class ExtensionNode(Node):
    attach: Optional[int] = None
    entries: List[Tuple[str, ExtValue]] = field(default_factory=list)

    def get(self, key: str) -> ExtValue:
        for k, v in self.entries:
            if k == key:
                return v
        return None


@dataclass
class IfNode(Node):
    cond: Expr = None
    then: Region = field(default_factory=list)
    orelse: Optional[Region] = None


@dataclass
class DeclNode(Node):
    name: str = ""
    type: str = "i32"
    init: Optional[Expr] = None


@dataclass
class AssignNode(Node):
    target: Expr = None
    value: Expr = None


@dataclass
class CallNode(Node):
    name: str = ""
    args: List[Expr] = field(default_factory=list)


@dataclass
class ReturnNode(Node):
    value: Optional[Expr] = None


# ---- 顶层 ----

@dataclass
class UpirParam:
    """参数；dims 为空表示标量，否则每维一个长度表达式（None 表示未知）"""
    name: str
    type: str
    dims: Tuple[Optional[Expr], ...] = ()

    @property
    def is_array(self) -> bool:
        return bool(self.dims)


@dataclass
class UpirFunction:
    name: str
    params: List[UpirParam] = field(default_factory=list)
    return_type: Optional[str] = None
    is_kernel: bool = False
    body: Region = field(default_factory=list)

    def param(self, name: str) -> Optional[UpirParam]:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass
class UpirModule:
    functions: List[UpirFunction] = field(default_factory=list)

    def function(self, name: str) -> Optional[UpirFunction]:
        for f in self.functions:
            if f.name == name:
                return f
        return None


REGION_NODES = (SpmdNode, LoopNode, TaskNode, DataRegionNode, IfNode, SyncNode)
