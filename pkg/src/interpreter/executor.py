"""
UPIR 解释器

Executor 按节点类型分派执行；fork、task、worksharing、同步和数据映射这些核心操作
以捕获列表和区域执行器为参数，replay 执行 RuntimeForm 时复用同一套实现。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping as MappingType, Optional, Tuple

import numpy as np

from ..frontend.ast_nodes import (
    COMPARE_OPS, ArraySection, BinOp, FloatLit, Ident, Index, Intrinsic, IntLit, Neg, c_div, c_mod
)
from ..passes.lowering import (
    BY_REFERENCE, DEFAULT_DEVICE_SPACE, HOST_SPACE, Capture, LoopSpec, RuntimeForm, capture_environment,
    device_space, is_worksharing, loop_spec, mapped_items, prepare_module, uses_unit_intrinsics
)
from ..passes.schedule import Dispatcher, ScheduleDescriptor, compute_schedule
from ..upir.nodes import (
    AssignNode, CallNode, DataItem, DataMovementNode, DataRegionNode, DataUpdateNode, DeclNode,
    ExtensionNode, IfNode, LoopNode, MmAllocNode, MmDeallocNode, Region, ReturnNode, SpmdNode,
    SyncNode, TaskNode, UpirFunction, UpirModule
)
from ..upir.traversal import node_index
from ..upir.validator import async_pair_key
from ..utils.errors import AsyncPairError, InputBindingError, InterpreterError, UnmappedAccessError
from .machine import (
    BLOCKED, PROGRESS, Cell, LoopSchedule, MachineState, QueuedTask, ReductionEntry, Scope, Step, Unit,
    dtype_of, is_float, scalar_cell
)

logger = logging.getLogger(__name__)

PARALLEL = "parallel"
SERIAL = "serial"
MODES = (PARALLEL, SERIAL)

Runner = Callable[[Unit, Scope], Step]

_COMBINE = {"+": np.add, "-": np.add, "*": np.multiply, "max": np.maximum, "min": np.minimum}


def reduction_identity(dtype, operation: str):
    """归约运算的单位元：+/- 为 0，* 为 1，max/min 取类型的极值"""
    if operation in ("+", "-"):
        return 0
    if operation == "*":
        return 1
    if np.issubdtype(dtype, np.floating):
        return -np.inf if operation == "max" else np.inf
    info = np.iinfo(dtype)
    return info.min if operation == "max" else info.max


def combine(operation: str, acc: np.ndarray, value: np.ndarray) -> np.ndarray:
    try:
        return _COMBINE[operation](acc, value).astype(acc.dtype)
    except KeyError:
        raise InterpreterError(f"未知的归约运算: {operation}")


class _Return(Exception):
    def __init__(self, value):
        super().__init__()
        self.value = value


@dataclass
class InterpretResult:
    """
    一次解释执行的结果

    buffers 是入口函数各参数在主机空间的最终值，trace 是逐行事件记录，
    schedules 是 worksharing 循环的分块记录。
    """
    buffers: Dict[str, np.ndarray]
    trace: List[str] = field(default_factory=list)
    schedules: List[LoopSchedule] = field(default_factory=list)
    return_value: object = None

    def format_buffers(self) -> str:
        lines = []
        for name, array in self.buffers.items():
            if array.ndim == 0:
                lines.append(f"{name} = {array.item()}")
            else:
                lines.append(f"{name} = {array.reshape(-1).tolist()}")
        return "\n".join(lines) + ("\n" if lines else "")

    def format_trace(self) -> str:
        return "\n".join(self.trace) + ("\n" if self.trace else "")


class Executor:
    """
    UPIR 的确定性解释器

    Args:
        module: 已完成 prepare_module 的模块
        mode: parallel 模拟多单元执行；serial 忽略并行标注按程序顺序执行
        units / teams: 覆盖 SPMD 区域的形状；区域内读取单元编号的不覆盖
        max_steps: 调度步数上限
        default_units / default_teams: SPMD 区域没有给出形状时的缺省值
    """

    def __init__(self, module: UpirModule, mode: str = PARALLEL, units: Optional[int] = None,
                 teams: Optional[int] = None, max_steps: int = 1_000_000,
                 default_units: int = 4, default_teams: int = 1):
        if mode not in MODES:
            raise InterpreterError(f"未知的执行模式: {mode}")
        self.module = module
        self.serial = mode == SERIAL
        self.units = units
        self.teams = teams
        self.default_units = default_units
        self.default_teams = default_teams
        self.machine = MachineState(max_steps)
        self.index = node_index(module)
        self.return_value = None

    # ---- 入口 ----

    def entry_function(self, name: Optional[str] = None) -> UpirFunction:
        if name is not None:
            function = self.module.function(name)
            if function is None:
                raise InterpreterError(f"入口函数 {name} 不存在")
            return function
        candidates = [f for f in self.module.functions if not f.is_kernel]
        if not candidates:
            raise InterpreterError("模块中没有可作为入口的非 kernel 函数")
        return candidates[-1]

    def run(self, inputs: MappingType[str, object], entry: Optional[str] = None) -> InterpretResult:
        function = self.entry_function(entry)
        root = Unit(0, 0, self.machine.new_group(1, 1))
        frame = self.bind_inputs(root, function, inputs)
        logger.info(f"解释 {function.name}: {'串行' if self.serial else '并行'}模式")
        self.machine.start(root, self.main(root, function, frame))
        self.machine.run()
        self.machine.check_balance()
        buffers = {p.name: frame.cells[p.name].array.copy() for p in function.params}
        schedules = [s for s in self.machine.schedules.values() if any(s.assignments.values())]
        return InterpretResult(buffers, list(self.machine.trace), schedules, self.return_value)

    def main(self, unit: Unit, function: UpirFunction, frame: Scope) -> Step:
        self.return_value = yield from self.invoke(unit, function, frame)
        self.finish_unit(unit)

    def bind_inputs(self, unit: Unit, function: UpirFunction, inputs: MappingType[str, object]) -> Scope:
        frame = Scope(boundary=True)
        missing = [p.name for p in function.params if p.name not in inputs]
        if missing:
            raise InputBindingError(f"函数 {function.name} 的参数没有绑定输入: {', '.join(missing)}")
        extra = sorted(set(inputs) - {p.name for p in function.params})
        if extra:
            logger.warning(f"忽略多余的输入: {', '.join(extra)}")
        for param in function.params:
            if param.is_array:
                continue
            value = np.asarray(inputs[param.name])
            if value.size != 1:
                raise InputBindingError(f"标量参数 {param.name} 收到了 {value.size} 个值")
            frame.bind(param.name, scalar_cell(param.type, value.reshape(()).item(), name=param.name))
        for param in function.params:
            if not param.is_array:
                continue
            array = np.array(inputs[param.name], dtype=dtype_of(param.type))
            frame.bind(param.name, Cell(self.shape_input(unit, frame, param, array), name=param.name))
        return frame

    def shape_input(self, unit: Unit, frame: Scope, param, array: np.ndarray) -> np.ndarray:
        dims = [self.eval_int(unit, frame, d) if d is not None else None for d in param.dims]
        unknown = [i for i, d in enumerate(dims) if d is None]
        if len(unknown) > 1:
            if array.ndim == len(dims):
                return array
            raise InputBindingError(f"数组参数 {param.name} 有多个未知维度，输入必须给出完整形状")
        known = math.prod(d for d in dims if d is not None)
        if unknown:
            if known == 0 or array.size % known:
                raise InputBindingError(f"数组参数 {param.name} 的元素个数 {array.size} 与维度不符")
            dims[unknown[0]] = array.size // known
        if math.prod(dims) != array.size:
            raise InputBindingError(
                f"数组参数 {param.name} 需要 {math.prod(dims)} 个元素，输入有 {array.size} 个"
            )
        return array.reshape(dims)

    # ---- 分派 ----

    def runner(self, region: Region) -> Runner:
        return lambda unit, scope: self.region(unit, scope, region)

    def region(self, unit: Unit, scope: Scope, region: Region) -> Step:
        for node in region:
            method = getattr(self, "_" + type(node).__name__, None)
            if method is None:
                raise InterpreterError(f"无法解释的节点 #{node.id}: {type(node).__name__}")
            steps = method(unit, scope, node)
            if steps is not None:
                yield from steps

    # ---- 表达式 ----

    def cell(self, unit: Unit, scope: Scope, name: str) -> Cell:
        cell = scope.lookup(name)
        if cell is None:
            raise InterpreterError(f"符号 {name} 未绑定")
        self.machine.check_space(unit, cell, name)
        return cell

    def element(self, unit: Unit, scope: Scope, expr: Index) -> Tuple[Cell, Tuple[int, ...]]:
        cell = self.cell(unit, scope, expr.name)
        if len(expr.indices) != cell.array.ndim:
            raise InterpreterError(
                f"{expr.name} 是 {cell.array.ndim} 维数组，访问给出了 {len(expr.indices)} 个下标"
            )
        index = tuple(self.eval_int(unit, scope, i) for i in expr.indices)
        for i, extent in zip(index, cell.array.shape):
            if not 0 <= i < extent:
                raise InterpreterError(f"{expr.name} 的下标 {list(index)} 越界，形状为 {list(cell.array.shape)}")
        return cell, index

    def eval(self, unit: Unit, scope: Scope, expr):
        if isinstance(expr, (IntLit, FloatLit)):
            return expr.value
        if isinstance(expr, Ident):
            cell = self.cell(unit, scope, expr.name)
            if not cell.is_scalar:
                raise InterpreterError(f"数组 {expr.name} 不能作为标量使用")
            return cell.value()
        if isinstance(expr, Index):
            cell, index = self.element(unit, scope, expr)
            return cell.array[index].item()
        if isinstance(expr, BinOp):
            return _arith(expr.op, self.eval(unit, scope, expr.lhs), self.eval(unit, scope, expr.rhs))
        if isinstance(expr, Neg):
            return -self.eval(unit, scope, expr.operand)
        if isinstance(expr, Intrinsic):
            return self.intrinsic(unit, expr.name)
        raise InterpreterError(f"无法求值的表达式: {type(expr).__name__}")

    def eval_int(self, unit: Unit, scope: Scope, expr) -> int:
        value = self.eval(unit, scope, expr)
        if not isinstance(value, int):
            raise InterpreterError(f"需要整数，得到 {value!r}")
        return value

    @staticmethod
    def intrinsic(unit: Unit, name: str) -> int:
        values = {
            "__unit_id": unit.unit_id,
            "__team_id": unit.team_id,
            "__units_per_team": unit.group.units_per_team,
            "__num_teams": unit.group.num_teams,
        }
        if name not in values:
            raise InterpreterError(f"未知的内建函数 {name}()")
        return values[name]

    def slices(self, unit: Unit, scope: Scope, section, cell: Cell):
        """数组段对应的 numpy 切片；没有数组段时取整个数组"""
        if not section:
            return Ellipsis
        result = []
        for dim, part in enumerate(section):
            extent = cell.array.shape[dim]
            if isinstance(part, ArraySection):
                lower = self.eval_int(unit, scope, part.lower) if part.lower is not None else 0
                stride = self.eval_int(unit, scope, part.stride) if part.stride is not None else 1
                length = self.eval_int(unit, scope, part.length) if part.length is not None \
                    else -(-(extent - lower) // stride)
                result.append(slice(lower, lower + length * stride, stride))
            else:
                i = self.eval_int(unit, scope, part)
                result.append(slice(i, i + 1))
        return tuple(result)

    # ---- 基本语句 ----

    def _DeclNode(self, unit: Unit, scope: Scope, node: DeclNode) -> None:
        value = self.eval(unit, scope, node.init) if node.init is not None else 0
        scope.bind(node.name, scalar_cell(node.type, value, unit.space, node.name))

    def _AssignNode(self, unit: Unit, scope: Scope, node: AssignNode) -> None:
        value = self.eval(unit, scope, node.value)
        if isinstance(node.target, Index):
            cell, index = self.element(unit, scope, node.target)
            cell.store(value, index)
        else:
            cell = self.cell(unit, scope, node.target.name)
            if not cell.is_scalar:
                raise InterpreterError(f"不能给数组 {node.target.name} 整体赋值")
            cell.store(value)

    def _IfNode(self, unit: Unit, scope: Scope, node: IfNode) -> Step:
        if self.eval(unit, scope, node.cond):
            yield from self.region(unit, scope.child(), node.then)
        elif node.orelse is not None:
            yield from self.region(unit, scope.child(), node.orelse)

    def _ReturnNode(self, unit: Unit, scope: Scope, node: ReturnNode) -> None:
        raise _Return(self.eval(unit, scope, node.value) if node.value is not None else None)

    def _ExtensionNode(self, unit: Unit, scope: Scope, node: ExtensionNode) -> None:
        pass

    def _CallNode(self, unit: Unit, scope: Scope, node: CallNode) -> Step:
        callee = self.module.function(node.name)
        if callee is None:
            raise InterpreterError(f"调用了不存在的函数 {node.name}")
        if len(node.args) != len(callee.params):
            raise InterpreterError(
                f"函数 {node.name} 需要 {len(callee.params)} 个参数，调用给出 {len(node.args)} 个"
            )
        frame = Scope(boundary=True)
        for param, arg in zip(callee.params, node.args):
            if param.is_array:
                if not isinstance(arg, Ident):
                    raise InterpreterError(f"数组参数 {param.name} 必须传入变量名")
                frame.bind(param.name, self.cell(unit, scope, arg.name))
            else:
                frame.bind(param.name, scalar_cell(param.type, self.eval(unit, scope, arg), unit.space, param.name))
        yield from self.invoke(unit, callee, frame)

    def invoke(self, unit: Unit, function: UpirFunction, frame: Scope) -> Step:
        try:
            yield from self.region(unit, frame, function.body)
            value = None
        except _Return as ret:
            value = ret.value
        yield from self.drain(unit)
        return value

    # ---- 捕获 ----

    def bind_captures(self, unit: Unit, scope: Scope, captures: List[Capture], frame: Scope) -> None:
        """
        在 frame 中绑定捕获的符号

        按引用的直接指向外层存储；按值的在 unit 当前空间新建：
        reduction 变量初始化为单位元并登记，firstprivate 拷贝外层值，其余清零。
        """
        for capture in captures:
            outer = scope.lookup(capture.symbol)
            if capture.mode == BY_REFERENCE:
                if outer is not None:
                    frame.bind(capture.symbol, outer)
                continue
            if capture.reduction is not None:
                if outer is None:
                    raise InterpreterError(f"reduction 变量 {capture.symbol} 未绑定")
                ref = capture.reduction
                private = outer.clone(unit.space, copy_values=False)
                private.array[...] = reduction_identity(private.array.dtype, ref.operation)
                entry = unit.reductions.get(ref.sync_id)
                if entry is None:
                    entry = ReductionEntry(ref.operation, ref.scope)
                    unit.reductions[ref.sync_id] = entry
                entry.cells[capture.symbol] = (private, outer)
                frame.bind(capture.symbol, private)
            elif outer is None:
                frame.bind(capture.symbol, scalar_cell("i32", 0, unit.space, capture.symbol))
            else:
                frame.bind(capture.symbol, outer.clone(unit.space, copy_values=capture.sharing == "firstprivate"))

    @staticmethod
    def skip_reductions(unit: Unit, sync_ids) -> None:
        for sync_id in sync_ids:
            unit.reductions[sync_id] = None

    # ---- SPMD ----

    def fork_shape(self, unit: Unit, scope: Scope, num_teams, num_units, unit_dependent: bool) -> Tuple[int, int]:
        teams = self.eval_int(unit, scope, num_teams) if num_teams is not None else None
        units = self.eval_int(unit, scope, num_units) if num_units is not None else None
        if not unit_dependent:
            teams = self.teams if self.teams is not None else teams
            units = self.units if self.units is not None else units
        teams = self.default_teams if teams is None else teams
        units = self.default_units if units is None else units
        if teams <= 0 or units <= 0:
            raise InterpreterError(f"SPMD 区域的形状必须为正: {teams} x {units}")
        return teams, units

    def fork(self, unit: Unit, scope: Scope, node_id: int, captures: List[Capture], runner: Runner,
             num_teams, num_units, unit_dependent: bool) -> Step:
        teams, units = self.fork_shape(unit, scope, num_teams, num_units, unit_dependent)
        if self.serial and not unit_dependent:
            teams = units = 1
        group = self.machine.new_group(teams, units)
        self.machine.event(unit, "fork", f"#{node_id} {teams}x{units}")
        children = []
        for team_id in range(teams):
            for unit_id in range(units):
                child = Unit(team_id, unit_id, group, unit.space, unit)
                frame = Scope(scope, boundary=True)
                self.bind_captures(child, scope, captures, frame)
                children.append((child, frame))
        if self.serial:
            for child, frame in children:
                yield from self.unit_main(child, frame, runner)
        else:
            for child, frame in children:
                self.machine.start(child, self.unit_main(child, frame, runner))
            while not group.done:
                yield BLOCKED
        self.machine.event(unit, "join", f"#{node_id}")

    def unit_main(self, unit: Unit, frame: Scope, runner: Runner) -> Step:
        yield from runner(unit, frame)
        yield from self.drain(unit)
        self.finish_unit(unit)
        unit.group.finished += 1
        self.machine.touch()

    @staticmethod
    def finish_unit(unit: Unit) -> None:
        leftover = [key[0] for key, pending in unit.pending_async.items() if pending]
        if leftover:
            raise AsyncPairError(f"单元 {unit.label} 结束时仍有未等待的异步同步: {', '.join(leftover)}")

    def _SpmdNode(self, unit: Unit, scope: Scope, node: SpmdNode) -> Step:
        captures = capture_environment(node, self.index)
        yield from self.fork(unit, scope, node.id, captures, self.runner(node.body),
                             node.num_teams, node.num_units, uses_unit_intrinsics(node.body, self.module))

    # ---- 任务 ----

    def task(self, unit: Unit, scope: Scope, node_id: int, captures: List[Capture], runner: Runner,
             kind: str, space: Optional[str], is_async: bool, policy: Optional[str]) -> Step:
        inline = self.serial or (kind != "plain" and not is_async) or policy == "work-first"
        frame = Scope(scope, boundary=True)
        saved = unit.space
        unit.space = space or saved
        try:
            self.bind_captures(unit, scope, captures, frame)
        finally:
            unit.space = saved
        queued = QueuedTask(node_id, frame, runner, space, kind)
        if inline:
            yield from self.run_task(unit, queued)
            return
        unit.tasks.append(queued)
        self.machine.event(unit, "task-spawn", _task_detail(queued))
        self.machine.touch()
        yield PROGRESS

    def run_task(self, unit: Unit, task: QueuedTask) -> Step:
        self.machine.event(unit, "task-run", _task_detail(task))
        saved = unit.space
        unit.space = task.space or saved
        try:
            yield from task.runner(unit, task.scope)
        finally:
            unit.space = saved
        self.machine.event(unit, "task-end", f"#{task.node_id}")

    def drain(self, unit: Unit) -> Step:
        while unit.tasks:
            yield from self.run_task(unit, unit.tasks.popleft())

    def _TaskNode(self, unit: Unit, scope: Scope, node: TaskNode) -> Step:
        space = device_space(node.space) if node.space is not None else None
        body = self.runner(node.body)
        items = mapped_items(node.data)

        def runner(inner: Unit, frame: Scope) -> Step:
            if space is not None:
                self.map_enter(inner, frame, items, space, bind=True)
            yield from body(inner, frame)
            if space is not None:
                self.map_exit(inner, frame, items, space, bind=True)

        yield from self.task(unit, scope, node.id, capture_environment(node, self.index), runner,
                             node.kind, space, node.is_async, node.policy)

    # ---- 循环 ----

    def loop_bounds(self, unit: Unit, scope: Scope, spec: LoopSpec) -> Tuple[int, int, int]:
        lower, upper, step = (self.eval_int(unit, scope, e) for e in (spec.lower, spec.upper, spec.step))
        if step <= 0:
            raise InterpreterError(f"循环 {spec.var} 的步长必须为正: {step}")
        return lower, upper, step

    def worksharing(self, unit: Unit, scope: Scope, node_id: int, captures: List[Capture],
                    runner: Runner, spec: LoopSpec) -> Step:
        parallel = spec.parallel
        target = parallel.distribute or "units"
        group = unit.group
        if self.serial:
            units, rank, participates = 1, 0, unit.global_id == 0
        elif target == "units":
            units, rank, participates = group.units_per_team, unit.unit_id, True
        elif target == "teams":
            units, rank, participates = group.num_teams, unit.team_id, unit.unit_id == 0
        else:
            units, rank, participates = group.size, unit.global_id, True
        if not participates:
            self.skip_reductions(unit, [c.reduction.sync_id for c in captures if c.reduction is not None])
            return

        lower, upper, step = self.loop_bounds(unit, scope, spec)
        chunk = self.eval_int(unit, scope, parallel.chunk) if parallel.chunk is not None else None
        desc = ScheduleDescriptor(parallel.schedule, chunk, lower, upper, step, units, target)
        frame = Scope(scope, boundary=True)
        self.bind_captures(unit, scope, captures, frame)
        var = frame.lookup_local(spec.var) or frame.bind(spec.var, scalar_cell("i32", 0, unit.space, spec.var))
        lastprivate = [(frame.cells[c.symbol], scope.lookup(c.symbol)) for c in captures
                       if c.sharing == "lastprivate" and c.mode != BY_REFERENCE and c.symbol in frame.cells]

        team_key = unit.team_id if target == "units" and not self.serial else "all"
        key = (group.id, team_key, node_id, unit.encounter(node_id))
        log = self.machine.loop_schedule(key, lambda: LoopSchedule(
            node_id, key[3], desc.effective_policy, desc.trip_count, units))
        total = desc.trip_count

        def run_chunk(start: int, end: int) -> Step:
            log.record(rank, (start, end))
            self.machine.event(unit, "chunk", f"#{node_id} [{start}, {end})")
            for index in range(start, end):
                var.store(desc.iteration(index))
                yield from runner(unit, frame.child())
            yield PROGRESS

        ran_last = False
        if desc.effective_policy == "static":
            for start, end in compute_schedule(desc, rank):
                yield from run_chunk(start, end)
                ran_last = ran_last or end == total
        else:
            dispatcher = self.machine.dispatcher(key, lambda: Dispatcher(desc))
            while True:
                chunk_range = dispatcher.next_chunk(rank)
                if chunk_range is None:
                    yield BLOCKED
                    continue
                start, end = chunk_range
                if start >= end:
                    break
                self.machine.touch()
                yield from run_chunk(start, end)
                ran_last = ran_last or end == total
        if ran_last:
            for private, outer in lastprivate:
                if outer is not None:
                    outer.array[...] = private.array

    def sequential_loop(self, unit: Unit, scope: Scope, spec: LoopSpec, runner: Runner,
                        skipped_reductions) -> Step:
        self.skip_reductions(unit, skipped_reductions)
        lower, upper, step = self.loop_bounds(unit, scope, spec)
        frame = scope.child()
        var = frame.bind(spec.var, scalar_cell("i32", 0, unit.space, spec.var))
        value = lower
        while value < upper:
            var.store(value)
            yield from runner(unit, frame.child())
            value += step
        outer = scope.lookup_local(spec.var)
        if outer is not None and outer.is_scalar:
            outer.store(value)

    def taskloop(self, unit: Unit, scope: Scope, node_id: int, captures: List[Capture],
                 runner: Runner, spec: LoopSpec) -> Step:
        """taskloop 的任务在遇到它的单元上按顺序执行，每个任务一段连续迭代"""
        self.skip_reductions(unit, [c.reduction.sync_id for c in captures if c.reduction is not None])
        lower, upper, step = self.loop_bounds(unit, scope, spec)
        total = max(0, -(-(upper - lower) // step))
        size = total or 1
        parallel = spec.parallel
        if parallel.num_tasks is not None:
            size = -(-total // max(1, self.eval_int(unit, scope, parallel.num_tasks))) or 1
        elif parallel.grainsize is not None:
            size = max(1, self.eval_int(unit, scope, parallel.grainsize))
        frame = Scope(scope, boundary=True)
        self.bind_captures(unit, scope, captures, frame)
        var = frame.lookup_local(spec.var) or frame.bind(spec.var, scalar_cell("i32", 0, unit.space, spec.var))
        for start in range(0, total, size):
            end = min(start + size, total)
            self.machine.event(unit, "task-run", f"#{node_id} taskloop [{start}, {end})")
            for index in range(start, end):
                var.store(lower + index * step)
                yield from runner(unit, frame.child())
            yield PROGRESS

    def _LoopNode(self, unit: Unit, scope: Scope, node: LoopNode) -> Step:
        spec = loop_spec(node)
        runner = self.runner(node.body)
        if is_worksharing(node):
            yield from self.worksharing(unit, scope, node.id, capture_environment(node, self.index), runner, spec)
        elif node.parallel is not None and node.parallel.kind == "taskloop":
            yield from self.taskloop(unit, scope, node.id, capture_environment(node, self.index), runner, spec)
        else:
            yield from self.sequential_loop(unit, scope, spec, runner, node.sync)

    # ---- 同步 ----

    def participants(self, unit: Unit, scope_kind: str) -> Tuple[object, int]:
        group = unit.group
        if scope_kind == "team":
            return unit.team_id, group.units_per_team
        if scope_kind == "leaders":
            return "leaders", group.num_teams
        return "all", group.size

    def arrive(self, unit: Unit, node: SyncNode, scope_kind: str, payload=None):
        team_key, expected = self.participants(unit, scope_kind)
        key = (unit.group.id, team_key, node.id, unit.encounter(node.id))
        point = self.machine.rendezvous(key, expected)
        point.arrived[unit.global_id] = payload
        self.machine.touch()
        self.machine.event(unit, "arrive-compute", f"#{node.id} {node.name}")
        return point

    def wait(self, unit: Unit, node: SyncNode, point, compute=None) -> Step:
        while not point.complete:
            yield BLOCKED
        first = not point.computed
        if first:
            point.result = compute(point.arrived) if compute is not None else None
        self.machine.release(point)
        self.machine.event(unit, "wait-release", f"#{node.id} {node.name}")
        return first, point.result

    def collective_plan(self, unit: Unit, scope: Scope, node: SyncNode):
        """
        集合同步的参与范围、到达时提交的数据、结果计算和放行后的写回

        Returns:
            (scope_kind, payload, compute, apply)；不需要同步时返回 None
        """
        name = node.name
        if name == "barrier":
            return "team", None, None, None
        if name == "reduction":
            entry = unit.reductions.pop(node.id, _UNREGISTERED)
            if entry is None:
                return None
            if entry is not _UNREGISTERED:
                return self.reduction_plan(entry)
            name = "allreduce"
        cells = {symbol: self.cell(unit, scope, symbol) for symbol in node.data}
        payload = {symbol: cell.array.copy() for symbol, cell in cells.items()}

        def apply(first, result):
            for symbol, cell in cells.items():
                cell.array[...] = result[symbol]

        if name == "broadcast":
            root = self.eval_int(unit, scope, node.primary.unit) \
                if node.primary is not None and node.primary.unit is not None else 0
            root_id = unit.team_id * unit.group.units_per_team + root

            def compute(arrived):
                if root_id not in arrived:
                    raise InterpreterError(f"broadcast #{node.id} 的根单元 {root} 不在参与者中")
                return arrived[root_id]

            return "team", payload, compute, apply
        if name == "allreduce":
            operation = node.operation or "+"

            def compute(arrived):
                ordered = [arrived[gid] for gid in sorted(arrived)]
                result = {}
                for symbol in cells:
                    acc = ordered[0][symbol].copy()
                    for values in ordered[1:]:
                        acc = combine(operation, acc, values[symbol])
                    result[symbol] = acc
                return result

            return "team", payload, compute, apply
        raise InterpreterError(f"{name} 不是集合同步")

    @staticmethod
    def reduction_plan(entry: ReductionEntry):
        payload = {symbol: private.array.copy() for symbol, (private, _) in entry.cells.items()}
        targets = {symbol: target for symbol, (_, target) in entry.cells.items()}

        def compute(arrived):
            result = {}
            for symbol, target in targets.items():
                acc = target.array.copy()
                for gid in sorted(arrived):
                    acc = combine(entry.operation, acc, arrived[gid][symbol])
                result[symbol] = acc
            return result

        def apply(first, result):
            if first:
                for symbol, target in targets.items():
                    target.array[...] = result[symbol]

        return entry.scope, payload, compute, apply

    def serial_collective(self, unit: Unit, node: SyncNode) -> None:
        if node.name != "reduction":
            return
        entry = unit.reductions.pop(node.id, None)
        if entry is None:
            return
        for private, target in entry.cells.values():
            target.array[...] = combine(entry.operation, target.array, private.array)

    def collective(self, unit: Unit, scope: Scope, node: SyncNode) -> Step:
        if self.serial:
            self.serial_collective(unit, node)
            return
        plan = self.collective_plan(unit, scope, node)
        if plan is None:
            return
        scope_kind, payload, compute, apply = plan
        point = self.arrive(unit, node, scope_kind, payload)
        first, result = yield from self.wait(unit, node, point, compute)
        if apply is not None:
            apply(first, result)

    def async_half(self, unit: Unit, scope: Scope, node: SyncNode) -> Step:
        key = async_pair_key(node)
        if node.step == "arrive-compute":
            plan = None
            if node.name in _COLLECTIVES and not self.serial:
                plan = self.collective_plan(unit, scope, node)
            point = None
            if plan is not None:
                point = self.arrive(unit, node, plan[0], plan[1])
            elif node.name not in _COLLECTIVES:
                yield from self.sync(unit, scope, _as_sync(node))
            unit.pending_async.setdefault(key, []).append((node, point, plan))
            return
        pending = unit.pending_async.get(key)
        if not pending:
            raise AsyncPairError(f"单元 {unit.label} 的 {node.name} #{node.id} wait-release 没有配对的 arrive-compute")
        arrived_node, point, plan = pending.pop(0)
        if point is not None:
            first, result = yield from self.wait(unit, arrived_node, point, plan[2])
            if plan[3] is not None:
                plan[3](first, result)
        elif self.serial and arrived_node.name == "reduction":
            self.serial_collective(unit, arrived_node)

    def exclusive(self, unit: Unit, scope: Scope, node: SyncNode, runner: Optional[Runner]) -> Step:
        key = (node.name, node.lock or "")
        while self.machine.locks.get(key, unit) is not unit:
            yield BLOCKED
        self.machine.locks[key] = unit
        self.machine.touch()
        self.machine.event(unit, f"{node.name}-enter", f"#{node.id}" + (f" {node.lock}" if node.lock else ""))
        try:
            if runner is not None:
                yield from runner(unit, scope.child())
        finally:
            self.machine.locks.pop(key, None)
            self.machine.touch()
        self.machine.event(unit, f"{node.name}-exit", f"#{node.id}")

    def single(self, unit: Unit, scope: Scope, node: SyncNode, runner: Optional[Runner]) -> Step:
        if unit.unit_id == 0:
            self.machine.event(unit, "single", f"#{node.id}")
            if runner is not None:
                yield from runner(unit, scope.child())
        if not self.serial:
            point = self.arrive(unit, node, "team")
            yield from self.wait(unit, node, point)

    def point_to_point(self, unit: Unit, scope: Scope, node: SyncNode) -> Step:
        """send/recv：参与方按 rank（组内单元编号）匹配，消息按符号排队"""
        if self.serial:
            return
        group = unit.group
        me = unit.unit_id
        primary = self.eval_int(unit, scope, node.primary.unit) \
            if node.primary is not None and node.primary.unit is not None else None
        secondary = self.eval_int(unit, scope, node.secondary.unit) \
            if node.secondary is not None and node.secondary.unit is not None else None
        others = [u for u in range(group.units_per_team) if u != me]
        if node.name == "send":
            if primary is not None and primary != me:
                return
            for dest in ([secondary] if secondary is not None else others):
                for symbol in node.data:
                    value = self.cell(unit, scope, symbol).array.copy()
                    self.machine.mailbox((group.id, unit.team_id, me, dest, symbol)).append(value)
                self.machine.event(unit, "send", f"#{node.id} -> {dest}")
            self.machine.touch()
            yield PROGRESS
            return
        if secondary is not None and secondary != me:
            return
        sources = [primary] if primary is not None else others
        while True:
            for src in sources:
                boxes = [self.machine.mailbox((group.id, unit.team_id, src, me, s)) for s in node.data]
                if all(boxes):
                    for symbol, box in zip(node.data, boxes):
                        self.cell(unit, scope, symbol).array[...] = box.popleft()
                    self.machine.touch()
                    self.machine.event(unit, "recv", f"#{node.id} <- {src}")
                    return
            yield BLOCKED

    def sync(self, unit: Unit, scope: Scope, node: SyncNode, runner: Optional[Runner] = None) -> Step:
        if node.mode == "async":
            yield from self.async_half(unit, scope, node)
        elif node.name == "taskwait":
            self.machine.event(unit, "taskwait", f"#{node.id}")
            yield from self.drain(unit)
        elif node.name in _COLLECTIVES:
            yield from self.collective(unit, scope, node)
        elif node.name == "single":
            yield from self.single(unit, scope, node, runner)
        elif node.name in ("critical", "atomic"):
            yield from self.exclusive(unit, scope, node, runner)
        elif node.name in ("send", "recv"):
            yield from self.point_to_point(unit, scope, node)
        else:
            raise InterpreterError(f"未知的同步 {node.name}")

    def _SyncNode(self, unit: Unit, scope: Scope, node: SyncNode) -> Step:
        runner = self.runner(node.body) if node.body is not None else None
        yield from self.sync(unit, scope, node, runner)

    # ---- 数据 ----

    def map_enter(self, unit: Unit, scope: Scope, items: Tuple[DataItem, ...], space: str, bind: bool) -> None:
        for item in items:
            cell = scope.lookup(item.symbol)
            if cell is None:
                raise InterpreterError(f"映射的符号 {item.symbol} 未绑定")
            if cell.space != HOST_SPACE:
                continue
            section = item.distribution.section if item.distribution is not None else ()
            slices = self.section_slices(unit, scope, section, cell)
            device = self.machine.map_enter(cell, space, item.mapping.value, section, slices)
            if bind:
                scope.bind(item.symbol, device)
            self.machine.event(unit, "map-enter", f"{item.symbol} {item.mapping.value} -> {space}")

    def map_exit(self, unit: Unit, scope: Scope, items: Tuple[DataItem, ...], space: str, bind: bool) -> None:
        for item in reversed(items):
            cell = scope.lookup(item.symbol)
            if cell is None:
                continue
            if bind:
                if cell.origin is None or cell.space != space:
                    continue
                host = cell.origin
            elif cell.space != HOST_SPACE:
                continue
            else:
                host = cell
            section = item.distribution.section if item.distribution is not None else ()
            self.machine.map_exit(host, space, self.section_slices(unit, scope, section, host))
            self.machine.event(unit, "map-exit", f"{item.symbol} {item.mapping.value} <- {space}")

    def section_slices(self, unit: Unit, scope: Scope, section, cell: Cell):
        """映射子句的数组段在映射建立前后都要能求值，这里不做空间检查"""
        self.machine.checking = False
        try:
            return self.slices(unit, scope, section, cell)
        finally:
            self.machine.checking = True

    def _DataRegionNode(self, unit: Unit, scope: Scope, node: DataRegionNode) -> Step:
        items = mapped_items(node.data)
        self.map_enter(unit, scope, items, DEFAULT_DEVICE_SPACE, bind=False)
        yield from self.region(unit, scope.child(), node.body)
        self.map_exit(unit, scope, items, DEFAULT_DEVICE_SPACE, bind=False)

    def host_cell(self, scope: Scope, name: str) -> Cell:
        cell = scope.lookup(name)
        if cell is None:
            raise InterpreterError(f"符号 {name} 未绑定")
        return cell.origin if cell.origin is not None else cell

    def space_cell(self, scope: Scope, name: str, target: str) -> Cell:
        host = self.host_cell(scope, name)
        if target == "host":
            return host
        space = device_space(target)
        mapping = self.machine.mapping_of(host, space)
        if mapping is not None:
            return mapping.device
        cell = scope.lookup(name)
        if cell.space == space:
            return cell
        raise UnmappedAccessError(f"符号 {name} 没有映射到 {space}")

    def update(self, unit: Unit, scope: Scope, node: DataUpdateNode) -> None:
        space = device_space(node.device)
        for item in node.items:
            host = self.host_cell(scope, item.name)
            mapping = self.machine.mapping_of(host, space)
            if mapping is None:
                raise UnmappedAccessError(f"update 的符号 {item.name} 没有映射到 {space}")
            section = item.indices if isinstance(item, Index) else ()
            slices = self.slices(unit, scope, section, host)
            if node.direction == "forward":
                mapping.device.array[slices] = host.array[slices]
            else:
                host.array[slices] = mapping.device.array[slices]
            self.machine.event(unit, "update", f"#{node.id} {item.name} {node.direction} {space}")

    def memcpy(self, unit: Unit, scope: Scope, node: DataMovementNode) -> None:
        """size 以字节计；forward 从 src 拷到 dest，backward 反向"""
        dest = self.space_cell(scope, node.dest_ptr, node.dest_target)
        src = self.space_cell(scope, node.src_ptr, node.src_target)
        if node.direction == "backward":
            dest, src = src, dest
        size = self.eval_int(unit, scope, node.size)
        itemsize = src.array.itemsize
        if size <= 0 or size % itemsize:
            raise InterpreterError(
                f"data_movement #{node.id} 的字节数 {size} 必须为正且是元素大小 {itemsize} 的整数倍"
            )
        count = size // itemsize
        if count > src.array.size or count > dest.array.size:
            raise InterpreterError(f"data_movement #{node.id} 拷贝 {size} 字节超出缓冲区大小")
        dest.array.reshape(-1)[:count] = src.array.reshape(-1)[:count]
        self.machine.event(unit, "memcpy", f"#{node.id} {count} elements {node.direction}")

    def alloc(self, unit: Unit, scope: Scope, node: MmAllocNode) -> None:
        count = self.eval_int(unit, scope, node.count)
        cell = self.machine.allocate(node.symbol, unit.space, node.element_type, count, node.allocator)
        scope.bind(node.symbol, cell)
        self.machine.event(unit, "alloc", f"{node.symbol} {count} {node.allocator} {unit.space}")

    def dealloc(self, unit: Unit, scope: Scope, node: MmDeallocNode) -> None:
        cell = scope.lookup(node.symbol)
        if cell is None:
            raise InterpreterError(f"释放的符号 {node.symbol} 未绑定")
        record = self.machine.deallocate(node.symbol, cell, node.deallocator)
        self.machine.event(unit, "dealloc", f"{node.symbol} {node.deallocator} {record.space}")

    _DataUpdateNode = update
    _DataMovementNode = memcpy
    _MmAllocNode = alloc
    _MmDeallocNode = dealloc


_UNREGISTERED = object()
_COLLECTIVES = ("barrier", "reduction", "broadcast", "allreduce")


def _as_sync(node: SyncNode) -> SyncNode:
    return SyncNode(id=node.id, name=node.name, mode="sync", primary=node.primary, secondary=node.secondary,
                    operation=node.operation, data=list(node.data), lock=node.lock)


def _task_detail(task: QueuedTask) -> str:
    detail = f"#{task.node_id} {task.kind}"
    if task.space is not None:
        detail += f"({task.space})"
    if task.kind == "remote":
        detail += " remote"
    return detail


def _arith(op: str, a, b):
    if op in COMPARE_OPS:
        return int({"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "==": a == b, "!=": a != b}[op])
    integral = isinstance(a, int) and isinstance(b, int)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        raise InterpreterError(f"除数为零: {a} {op} {b}")
    if op == "/":
        return c_div(a, b) if integral else a / b
    if op == "%":
        return c_mod(a, b) if integral else math.fmod(a, b)
    raise InterpreterError(f"未知的运算符 {op}")


def interpret(module: UpirModule, inputs: MappingType[str, object], mode: str = PARALLEL,
              units: Optional[int] = None, teams: Optional[int] = None, entry: Optional[str] = None,
              max_steps: int = 1_000_000, default_units: int = 4, default_teams: int = 1) -> InterpretResult:
    """
    解释执行 UPIR 模块或降级后的 RuntimeForm

    Args:
        module: UpirModule 或 RuntimeForm，输入不变
        inputs: 入口函数参数名 -> 初始值（数组或标量）
        mode: parallel / serial
        units / teams: 覆盖 SPMD 区域的形状
        entry: 入口函数名，缺省为最后一个非 kernel 函数
        max_steps: 调度步数上限

    Returns:
        InterpretResult

    Raises:
        InputBindingError: 输入与参数不符
        UnmappedAccessError: 在设备空间访问了未映射的符号
        AsyncPairError: 异步同步的 arrive/wait 不配对
        DeadlockError: 调度停滞或超过步数上限
        AllocationImbalanceError: 分配与释放不平衡
    """
    options = dict(mode=mode, units=units, teams=teams, max_steps=max_steps,
                   default_units=default_units, default_teams=default_teams)
    if isinstance(module, RuntimeForm):
        from .replay import Replayer
        executor = Replayer(module, **options)
    else:
        executor = Executor(prepare_module(module), **options)
    return executor.run(inputs, entry)


def _zeros_for(executor: Executor, function: UpirFunction, inputs: Dict[str, object]) -> Dict[str, object]:
    filled = dict(inputs)
    for param in function.params:
        if param.name not in filled and not param.is_array:
            filled[param.name] = 0
    root = Unit(0, 0, executor.machine.new_group(1, 1))
    scope = Scope(boundary=True)
    for param in function.params:
        if not param.is_array and param.name in filled:
            scope.bind(param.name, scalar_cell(param.type, np.asarray(filled[param.name]).reshape(()).item()))
    for param in function.params:
        if param.name not in filled:
            dims = [executor.eval_int(root, scope, d) if d is not None else 0 for d in param.dims]
            filled[param.name] = np.zeros(dims, dtype=dtype_of(param.type))
    return filled


def trace_schedule(module: UpirModule, units: int, teams: Optional[int] = None,
                   inputs: Optional[MappingType[str, object]] = None,
                   entry: Optional[str] = None) -> List[LoopSchedule]:
    """
    执行模块并返回每个 worksharing 循环的分块记录

    缺失的标量输入按 0、数组按给定维度的零数组补齐；没有分到任何迭代的循环不出现在结果里。
    """
    executor = Executor(prepare_module(module), PARALLEL, units=units, teams=teams)
    function = executor.entry_function(entry)
    filled = _zeros_for(executor, function, dict(inputs or {}))
    return executor.run(filled, entry).schedules


def format_schedules(schedules: List[LoopSchedule]) -> str:
    """每个循环一行头，随后每个单元一行分块，如 unit 0: [0,4) [8,10)"""
    lines = []
    for schedule in schedules:
        lines.append(f"loop #{schedule.loop_id} encounter={schedule.encounter} policy={schedule.policy} "
                     f"trip={schedule.trip_count} units={schedule.num_units}")
        for rank in sorted(schedule.assignments):
            chunks = " ".join(f"[{start},{end})" for start, end in schedule.assignments[rank])
            lines.append(f"  unit {rank}: {chunks}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def buffer_mismatches(expected: Dict[str, np.ndarray], actual: Dict[str, np.ndarray],
                      tolerance: float = 1e-12) -> List[str]:
    """浮点缓冲区按相对误差比较，整数缓冲区逐位比较；返回不一致的名字"""
    mismatches = []
    for name in sorted(set(expected) | set(actual)):
        a, b = expected.get(name), actual.get(name)
        if a is None or b is None or a.shape != b.shape:
            mismatches.append(name)
        elif is_float(a) or is_float(b):
            if not np.allclose(a, b, rtol=tolerance, atol=tolerance, equal_nan=True):
                mismatches.append(name)
        elif not np.array_equal(a, b):
            mismatches.append(name)
    return mismatches


def compare_buffers(expected: Dict[str, np.ndarray], actual: Dict[str, np.ndarray],
                    tolerance: float = 1e-12) -> bool:
    return not buffer_mismatches(expected, actual, tolerance)
