"""
upirc - 配置管理模块
"""

from .config_manager import ConfigManager, UpircSettings, ANALYSIS_NAMES

__all__ = ["ConfigManager", "UpircSettings", "ANALYSIS_NAMES"]
