"""
解释器的机器状态

单元（unit）用生成器模拟：每个单元执行到同步点、循环块边界或任务派生处 yield 一次，
调度器按轮转顺序推进所有活动单元。一轮下来没有任何单元前进且状态版本不变即判定死锁。
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Generator, List, Optional, Tuple

import numpy as np

from ..passes.lowering import HOST_SPACE
from ..passes.schedule import Chunk, Dispatcher
from ..utils.errors import AllocationImbalanceError, DeadlockError, InterpreterError, UnmappedAccessError

logger = logging.getLogger(__name__)

PROGRESS = "progress"
BLOCKED = "blocked"

DTYPES = {"i32": np.int32, "f32": np.float32, "f64": np.float64}

Step = Generator[str, None, object]


def dtype_of(type_name: str):
    try:
        return DTYPES[type_name]
    except KeyError:
        raise InterpreterError(f"不支持的元素类型: {type_name}")


def is_float(array: np.ndarray) -> bool:
    return np.issubdtype(array.dtype, np.floating)


# ---- 存储 ----

@dataclass(eq=False)
class Cell:
    """
    一块类型化存储：标量是 0 维数组

    设备副本的 origin 指向对应的主机存储。
    """
    array: np.ndarray
    space: str = HOST_SPACE
    origin: Optional["Cell"] = None
    name: str = ""

    @property
    def is_scalar(self) -> bool:
        return self.array.ndim == 0

    def value(self):
        return self.array.item()

    def store(self, value, index: Tuple[int, ...] = ()) -> None:
        if not is_float(self.array) and isinstance(value, float):
            value = int(value)
        self.array[index] = value

    def clone(self, space: Optional[str] = None, copy_values: bool = True) -> "Cell":
        array = self.array.copy() if copy_values else np.zeros_like(self.array)
        return Cell(array, space or self.space, None, self.name)


def scalar_cell(type_name: str, value=0, space: str = HOST_SPACE, name: str = "") -> Cell:
    cell = Cell(np.zeros((), dtype=dtype_of(type_name)), space, None, name)
    cell.store(value)
    return cell


class Scope:
    """
    符号到存储的绑定

    boundary 为真的作用域是单元、外提函数或被调函数的起点，
    lookup_local 不会越过它。
    """

    def __init__(self, parent: Optional["Scope"] = None, boundary: bool = False):
        self.parent = parent
        self.boundary = boundary
        self.cells: Dict[str, Cell] = {}

    def bind(self, name: str, cell: Cell) -> Cell:
        self.cells[name] = cell
        return cell

    def lookup(self, name: str) -> Optional[Cell]:
        scope = self
        while scope is not None:
            if name in scope.cells:
                return scope.cells[name]
            scope = scope.parent
        return None

    def lookup_local(self, name: str) -> Optional[Cell]:
        scope = self
        while scope is not None:
            if name in scope.cells:
                return scope.cells[name]
            if scope.boundary:
                return None
            scope = scope.parent
        return None

    def child(self, boundary: bool = False) -> "Scope":
        return Scope(self, boundary)


@dataclass(eq=False)
class Mapping:
    host: Cell
    device: Cell
    kind: str
    section: Tuple = ()
    refcount: int = 0


@dataclass
class AllocationRecord:
    symbol: str
    space: str
    size: int
    allocator: str
    cell: Cell = field(repr=False)
    live: bool = True


# ---- 单元与同步 ----

@dataclass(eq=False)
class Group:
    """一次 fork 产生的单元组，num_teams x units_per_team"""
    id: int
    num_teams: int
    units_per_team: int
    finished: int = 0

    @property
    def size(self) -> int:
        return self.num_teams * self.units_per_team

    @property
    def done(self) -> bool:
        return self.finished >= self.size


@dataclass
class ReductionEntry:
    """单元登记的一次 reduction：符号 -> (私有副本, 合并目标)"""
    operation: str
    scope: str
    cells: Dict[str, Tuple[Cell, Cell]] = field(default_factory=dict)


@dataclass(eq=False)
class QueuedTask:
    node_id: int
    scope: Scope
    runner: object
    space: Optional[str]
    kind: str


@dataclass(eq=False)
class Unit:
    team_id: int
    unit_id: int
    group: Group
    space: str = HOST_SPACE
    parent: Optional["Unit"] = None
    tasks: Deque[QueuedTask] = field(default_factory=deque)
    reductions: Dict[int, Optional[ReductionEntry]] = field(default_factory=dict)
    encounters: Dict[int, int] = field(default_factory=dict)
    pending_async: Dict[Tuple, List] = field(default_factory=dict)

    @property
    def global_id(self) -> int:
        return self.team_id * self.group.units_per_team + self.unit_id

    @property
    def label(self) -> str:
        return f"{self.team_id}.{self.unit_id}"

    def encounter(self, node_id: int) -> int:
        count = self.encounters.get(node_id, 0)
        self.encounters[node_id] = count + 1
        return count


_UNSET = object()


class Rendezvous:
    """
    两步同步点：arrive 记录到达与数据，所有参与者到齐后 wait 才放行

    第一个被放行的单元计算结果，其余单元直接取用。
    """

    def __init__(self, key: Tuple, expected: int):
        self.key = key
        self.expected = expected
        self.arrived: Dict[int, object] = {}
        self.released = 0
        self.result = _UNSET

    @property
    def complete(self) -> bool:
        return len(self.arrived) >= self.expected

    @property
    def computed(self) -> bool:
        return self.result is not _UNSET


@dataclass
class LoopSchedule:
    """一次 worksharing 循环的分块记录，按规范化下标"""
    loop_id: int
    encounter: int
    policy: str
    trip_count: int
    num_units: int
    assignments: Dict[int, List[Chunk]] = field(default_factory=dict)

    def record(self, rank: int, chunk: Chunk) -> None:
        self.assignments.setdefault(rank, [])
        if chunk[1] > chunk[0]:
            self.assignments[rank].append(chunk)


# ---- 机器 ----

@dataclass(eq=False)
class _Thread:
    unit: Unit
    steps: Step


class MachineState:
    """
    解释器的全部可变状态与轮转调度器

    Args:
        max_steps: 调度步数上限，超过即视为死锁
    """

    def __init__(self, max_steps: int = 1_000_000):
        self.max_steps = max_steps
        self.clock = 0
        self.version = 0
        self.threads: List[_Thread] = []
        self.trace: List[str] = []
        self.mappings: Dict[Tuple[int, str], Mapping] = {}
        self.ledger: List[AllocationRecord] = []
        self.rendezvous_points: Dict[Tuple, Rendezvous] = {}
        self.dispatchers: Dict[Tuple, Dispatcher] = {}
        self.schedules: Dict[Tuple, LoopSchedule] = {}
        self.mailboxes: Dict[Tuple, Deque] = {}
        self.locks: Dict[Tuple, Unit] = {}
        self.checking = True
        self._next_group = 0

    # ---- 调度 ----

    def touch(self) -> None:
        self.version += 1

    def new_group(self, num_teams: int, units_per_team: int) -> Group:
        group = Group(self._next_group, num_teams, units_per_team)
        self._next_group += 1
        return group

    def start(self, unit: Unit, steps: Step) -> None:
        self.threads.append(_Thread(unit, steps))
        self.touch()

    def run(self) -> None:
        """推进所有单元直到全部结束"""
        while self.threads:
            before = self.version
            progressed = False
            for thread in list(self.threads):
                self.clock += 1
                if self.clock > self.max_steps:
                    raise DeadlockError(f"超过调度步数上限 {self.max_steps}，疑似死锁")
                try:
                    state = next(thread.steps)
                except StopIteration:
                    self.threads.remove(thread)
                    self.touch()
                    progressed = True
                    continue
                if state != BLOCKED:
                    progressed = True
            if not progressed and self.version == before:
                waiting = ", ".join(t.unit.label for t in self.threads)
                raise DeadlockError(f"所有单元都在等待且没有单元能继续执行: {waiting}")

    def event(self, unit: Unit, kind: str, detail: str = "") -> None:
        line = f"t={self.clock} unit={unit.label} event={kind}"
        if detail:
            line += f" detail={detail}"
        self.trace.append(line)
        logger.debug(line)

    # ---- 同步 ----

    def rendezvous(self, key: Tuple, expected: int) -> Rendezvous:
        point = self.rendezvous_points.get(key)
        if point is None:
            point = Rendezvous(key, expected)
            self.rendezvous_points[key] = point
        return point

    def release(self, point: Rendezvous) -> None:
        point.released += 1
        if point.released >= point.expected:
            self.rendezvous_points.pop(point.key, None)
        self.touch()

    def dispatcher(self, key: Tuple, factory) -> Dispatcher:
        if key not in self.dispatchers:
            self.dispatchers[key] = factory()
        return self.dispatchers[key]

    def loop_schedule(self, key: Tuple, factory) -> LoopSchedule:
        if key not in self.schedules:
            self.schedules[key] = factory()
        return self.schedules[key]

    def mailbox(self, key: Tuple) -> Deque:
        return self.mailboxes.setdefault(key, deque())

    # ---- 内存空间 ----

    def check_space(self, unit: Unit, cell: Cell, name: str) -> None:
        if self.checking and cell.space != unit.space:
            raise UnmappedAccessError(
                f"单元 {unit.label} 在 {unit.space} 中访问了位于 {cell.space} 的符号 {name}"
            )

    def mapping_of(self, host: Cell, space: str) -> Optional[Mapping]:
        return self.mappings.get((id(host), space))

    def map_enter(self, host: Cell, space: str, kind: str, section, slices) -> Cell:
        """引用计数从 0 变 1 时建立设备副本，to/tofrom 拷入"""
        key = (id(host), space)
        mapping = self.mappings.get(key)
        if mapping is None:
            device = Cell(np.zeros_like(host.array), space, host, host.name)
            mapping = Mapping(host, device, kind, section)
            self.mappings[key] = mapping
            if kind in ("to", "tofrom"):
                device.array[slices] = host.array[slices]
            self.touch()
        mapping.refcount += 1
        return mapping.device

    def map_exit(self, host: Cell, space: str, slices) -> Optional[Mapping]:
        """引用计数从 1 变 0 时按 from/tofrom 拷回并释放"""
        key = (id(host), space)
        mapping = self.mappings.get(key)
        if mapping is None:
            raise UnmappedAccessError(f"符号 {host.name} 在 {space} 中没有映射，无法解除")
        mapping.refcount -= 1
        if mapping.refcount == 0:
            if mapping.kind in ("from", "tofrom"):
                host.array[slices] = mapping.device.array[slices]
            del self.mappings[key]
            self.touch()
        return mapping

    # ---- 分配记录 ----

    def allocate(self, symbol: str, space: str, type_name: str, count: int, allocator: str) -> Cell:
        if count < 0:
            raise InterpreterError(f"分配 {symbol} 的元素个数为负: {count}")
        cell = Cell(np.zeros(count, dtype=dtype_of(type_name)), space, None, symbol)
        self.ledger.append(AllocationRecord(symbol, space, count, allocator, cell))
        self.touch()
        return cell

    def deallocate(self, symbol: str, cell: Cell, deallocator: str) -> AllocationRecord:
        for record in self.ledger:
            if record.live and record.cell is cell:
                record.live = False
                self.touch()
                return record
        raise AllocationImbalanceError(f"{deallocator} 释放的 {symbol} 没有对应的存活分配")

    def check_balance(self) -> None:
        live = [r for r in self.ledger if r.live]
        if live:
            names = ", ".join(f"{r.symbol}@{r.space}({r.allocator})" for r in live)
            raise AllocationImbalanceError(f"程序结束时仍有未释放的分配: {names}")
