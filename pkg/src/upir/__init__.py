"""
upirc - UPIR 核心：节点、构建、打印、解析与校验
"""

from .builder import build_upir, clause_home
from .nodes import (
    DataItem, DataRegionNode, LoopNode, LoopParallel, SpmdNode, SyncNode, TaskNode,
    UpirFunction, UpirModule
)
from .parser import parse_upir
from .printer import format_upir_expr, print_upir
from .traversal import canonicalize, walk
from .validator import check_upir, validate_upir

__all__ = [
    "build_upir", "clause_home",
    "DataItem", "DataRegionNode", "LoopNode", "LoopParallel", "SpmdNode", "SyncNode", "TaskNode",
    "UpirFunction", "UpirModule",
    "parse_upir",
    "format_upir_expr", "print_upir",
    "canonicalize", "walk",
    "check_upir", "validate_upir"
]
