"""
upirc - 命令行界面模块
"""

from .cli_ui import CLIUI, EMIT_KINDS, run_cli

__all__ = [
    "CLIUI",
    "EMIT_KINDS",
    "run_cli"
]
