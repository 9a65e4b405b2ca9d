"""
RuntimeForm 的回放执行

运行时原语调用映射回 Executor 的核心操作，外提函数的环境就是捕获列表，
所以回放与直接解释 UPIR 走同一套 fork / task / worksharing / 同步实现。
"""

import logging
from typing import Dict, Optional

from ..passes.lowering import ForkSpec, LoopSpec, MapSpec, OutlinedFunction, RuntimeCall, RuntimeForm, TaskSpec
from ..upir.nodes import SyncNode
from ..utils.errors import InterpreterError
from .executor import PARALLEL, Executor
from .machine import Scope, Step, Unit

logger = logging.getLogger(__name__)


class Replayer(Executor):
    """执行 lower_to_runtime 的结果"""

    def __init__(self, form: RuntimeForm, mode: str = PARALLEL, **options):
        super().__init__(form, mode, **options)
        self.form = form
        self.sync_specs: Dict[int, SyncNode] = {
            call.id: call.spec for call in form.calls() if isinstance(call.spec, SyncNode)
        }
        logger.debug(f"回放: {len(form.outlined)} 个外提函数, {len(self.sync_specs)} 个同步调用")

    def outlined(self, call: RuntimeCall) -> OutlinedFunction:
        try:
            return self.form.outlined[call.fn]
        except KeyError:
            raise InterpreterError(f"运行时调用 #{call.id} 引用了不存在的外提函数 {call.fn}")

    def _RuntimeCall(self, unit: Unit, scope: Scope, call: RuntimeCall) -> Optional[Step]:
        method = getattr(self, "_call_" + call.primitive, None)
        if method is None:
            raise InterpreterError(f"未知的运行时原语 {call.primitive}")
        return method(unit, scope, call)

    def _call_fork_units(self, unit: Unit, scope: Scope, call: RuntimeCall) -> Step:
        spec: ForkSpec = call.spec
        fn = self.outlined(call)
        yield from self.fork(unit, scope, call.id, fn.env, self.runner(fn.body),
                             spec.num_teams, spec.num_units, spec.unit_dependent)

    _call_fork_teams = _call_fork_units

    def _call_launch_task(self, unit: Unit, scope: Scope, call: RuntimeCall) -> Step:
        spec: TaskSpec = call.spec
        fn = self.outlined(call)
        yield from self.task(unit, scope, call.id, fn.env, self.runner(fn.body),
                             spec.kind, spec.space, spec.is_async, spec.policy)

    def _call_dispatch_loop(self, unit: Unit, scope: Scope, call: RuntimeCall) -> Step:
        spec: LoopSpec = call.spec
        fn = self.outlined(call)
        yield from self.worksharing(unit, scope, call.id, fn.env, self.runner(fn.body), spec)

    def _call_taskloop(self, unit: Unit, scope: Scope, call: RuntimeCall) -> Step:
        fn = self.outlined(call)
        yield from self.taskloop(unit, scope, call.id, fn.env, self.runner(fn.body), call.spec)

    def _call_map_enter(self, unit: Unit, scope: Scope, call: RuntimeCall) -> None:
        spec: MapSpec = call.spec
        self.map_enter(unit, scope, spec.items, spec.space, spec.bind)

    def _call_map_exit(self, unit: Unit, scope: Scope, call: RuntimeCall) -> None:
        spec: MapSpec = call.spec
        self.map_exit(unit, scope, spec.items, spec.space, spec.bind)

    def _call_sync(self, unit: Unit, scope: Scope, call: RuntimeCall) -> Step:
        spec = self.sync_specs.get(call.id, call.spec)
        runner = self.runner(self.outlined(call).body) if call.fn is not None else None
        yield from self.sync(unit, scope, spec, runner)

    _call_barrier = _call_sync
    _call_reduce = _call_sync
    _call_taskwait = _call_sync
    _call_single = _call_sync
    _call_critical = _call_sync
    _call_atomic = _call_sync

    def _call_update(self, unit: Unit, scope: Scope, call: RuntimeCall) -> None:
        self.update(unit, scope, call.spec)

    def _call_memcpy(self, unit: Unit, scope: Scope, call: RuntimeCall) -> None:
        self.memcpy(unit, scope, call.spec)

    def _call_alloc(self, unit: Unit, scope: Scope, call: RuntimeCall) -> None:
        self.alloc(unit, scope, call.spec)

    def _call_dealloc(self, unit: Unit, scope: Scope, call: RuntimeCall) -> None:
        self.dealloc(unit, scope, call.spec)


def replay(form: RuntimeForm, inputs, mode: str = PARALLEL, entry: Optional[str] = None, **options):
    """回放 RuntimeForm，参数与 interpret 相同"""
    return Replayer(form, mode, **options).run(inputs, entry)
