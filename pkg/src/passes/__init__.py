"""
upirc - 变换：流程管理、barrier 消除、循环合并、调度、运行时下降与反向生成
"""

from .acc_dialect import export_acc_dialect
from .barrier_elimination import count_barriers, eliminate_redundant_barriers
from .loop_collapse import collapse_loops, collapse_module
from .lowering import (
    Capture, RuntimeCall, RuntimeForm, capture_environment, format_runtime, lower_to_runtime,
    prepare_module
)
from .pass_manager import FunctionPass, Pass, PassManager, build_pipeline, registered_passes
from .schedule import Dispatcher, ScheduleDescriptor, compute_schedule
from .unparser import strip_analysis, unparse_to_openacc, unparse_to_openmp

__all__ = [
    "export_acc_dialect",
    "count_barriers", "eliminate_redundant_barriers",
    "collapse_loops", "collapse_module",
    "Capture", "RuntimeCall", "RuntimeForm", "capture_environment", "format_runtime",
    "lower_to_runtime", "prepare_module",
    "FunctionPass", "Pass", "PassManager", "build_pipeline", "registered_passes",
    "Dispatcher", "ScheduleDescriptor", "compute_schedule",
    "strip_analysis", "unparse_to_openacc", "unparse_to_openmp"
]
