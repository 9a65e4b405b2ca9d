"""
upirc - 工具模块
"""

from .logger import setup_logger
from .errors import SourcePosition, UpircError
from .utils import (
    color_enabled,
    format_diagnostic,
    parse_input_bindings,
    read_source,
    write_output
)

__all__ = [
    "setup_logger",
    "SourcePosition", "UpircError",
    "color_enabled", "format_diagnostic", "parse_input_bindings",
    "read_source", "write_output"
]
