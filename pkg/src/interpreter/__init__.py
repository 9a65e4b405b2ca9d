"""
upirc - 解释器：模拟多单元执行 UPIR 与 RuntimeForm，并提供串行参照模式
"""

from .executor import (
    MODES, PARALLEL, SERIAL, Executor, InterpretResult, buffer_mismatches, compare_buffers, format_schedules,
    interpret, trace_schedule
)
from .machine import Cell, LoopSchedule, MachineState, Scope, Unit
from .replay import Replayer, replay

__all__ = [
    "MODES", "PARALLEL", "SERIAL", "Executor", "InterpretResult", "buffer_mismatches", "compare_buffers",
    "format_schedules", "interpret", "trace_schedule",
    "Cell", "LoopSchedule", "MachineState", "Scope", "Unit",
    "Replayer", "replay"
]
