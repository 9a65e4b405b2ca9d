"""
upirc - 前端：内核语言、OpenMP/OpenACC 指令与 CUDA 启动的解析
"""

from .ast_nodes import Clause, Directive, Function, Param, Program
from .c_printer import format_directive, format_expr
from .cuda_launch import recognize_cuda_launch
from .directive_parser import (
    is_loop_directive,
    is_standalone,
    parse_acc_directive,
    parse_directive,
    parse_omp_directive,
    render_directive
)
from .kernel_parser import analyze_canonical_loop, parse_kernel_source

__all__ = [
    "Clause", "Directive", "Function", "Param", "Program",
    "format_directive", "format_expr",
    "recognize_cuda_launch",
    "is_loop_directive", "is_standalone", "parse_acc_directive", "parse_directive",
    "parse_omp_directive", "render_directive",
    "analyze_canonical_loop", "parse_kernel_source"
]
