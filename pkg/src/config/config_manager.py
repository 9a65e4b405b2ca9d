"""
配置管理器实现
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError

from ..utils.errors import ConfigError

logger = logging.getLogger(__name__)

ANALYSIS_NAMES = ["data-attributes", "access-modes", "implicit-sync", "nesting", "divergence"]


class LoggingSettings(BaseModel):
    level: str = "WARNING"
    file: Optional[str] = None


class InterpreterSettings(BaseModel):
    default_units: int = Field(default=4, ge=1)
    default_teams: int = Field(default=1, ge=1)
    max_steps: int = Field(default=2_000_000, ge=1)
    float_tolerance: float = Field(default=1e-12, ge=0.0)


class PipelineSettings(BaseModel):
    analyses: List[str] = Field(default_factory=lambda: list(ANALYSIS_NAMES))
    transforms: List[str] = Field(default_factory=list)


class DiagnosticsSettings(BaseModel):
    color: bool = False


class OutputSettings(BaseModel):
    runtime_suffix: str = ".rtf.txt"
    upir_suffix: str = ".upir"


class UpircSettings(BaseModel):
    """校验后的完整配置"""
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    interpreter: InterpreterSettings = Field(default_factory=InterpreterSettings)
    pipeline: PipelineSettings = Field(default_factory=PipelineSettings)
    diagnostics: DiagnosticsSettings = Field(default_factory=DiagnosticsSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)


class ConfigManager:
    """配置管理器，负责读取和管理编译器配置"""

    def __init__(self, config_path: str = "config.yaml"):
        """
        初始化配置管理器

        Args:
            config_path: 配置文件路径
        """
        self.config_path = Path(config_path)
        self._config: Dict[str, Any] = {}
        self.settings = UpircSettings()
        self.load_config()

    def load_config(self) -> None:
        """加载配置文件，缺失或格式错误时回退到默认配置"""
        try:
            with open(self.config_path, 'r', encoding='utf-8') as file:
                loaded = yaml.safe_load(file) or {}
        except FileNotFoundError:
            logger.warning(f"配置文件 {self.config_path} 不存在，将使用默认配置")
            loaded = {}
        except yaml.YAMLError as e:
            logger.warning(f"配置文件格式错误: {e}，将使用默认配置")
            loaded = {}

        if not isinstance(loaded, dict):
            logger.warning(f"配置文件 {self.config_path} 顶层不是映射，将使用默认配置")
            loaded = {}

        self._config = self._merge(self._get_default_config(), loaded)
        self._validate()

    def _validate(self) -> None:
        try:
            self.settings = UpircSettings(**self._config)
        except ValidationError as e:
            raise ConfigError(f"配置校验失败: {e}")

    @staticmethod
    def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        merged = copy.deepcopy(base)
        for key, value in override.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = ConfigManager._merge(merged[key], value)
            else:
                merged[key] = value
        return merged

    def get_config(self) -> Dict[str, Any]:
        """
        获取完整配置

        Returns:
            配置字典
        """
        return self._config

    def get_section(self, name: str) -> Dict[str, Any]:
        """
        获取某个配置节

        Args:
            name: 配置节名

        Returns:
            配置节字典，不存在时为空字典
        """
        return self._config.get(name, {})

    def get_interpreter_config(self) -> InterpreterSettings:
        """获取解释器配置"""
        return self.settings.interpreter

    def get_pipeline_config(self) -> PipelineSettings:
        """获取编译流程配置"""
        return self.settings.pipeline

    def update_config(self, section: str, key: str, value: Any) -> None:
        """
        更新配置并重新校验

        Args:
            section: 配置节名
            key: 配置键
            value: 配置值
        """
        if section not in self._config:
            self._config[section] = {}
        self._config[section][key] = value
        self._validate()

    def save_config(self) -> None:
        """保存配置到文件"""
        self.config_path.parent.mkdir(parents=True, exist_ok=True)

        with open(self.config_path, 'w', encoding='utf-8') as file:
            yaml.dump(self._config, file, default_flow_style=False, allow_unicode=True)

    def _get_default_config(self) -> Dict[str, Any]:
        """获取默认配置"""
        return {
            'logging': {
                'level': 'WARNING',
                'file': None
            },
            'interpreter': {
                'default_units': 4,
                'default_teams': 1,
                'max_steps': 2_000_000,
                'float_tolerance': 1e-12
            },
            'pipeline': {
                'analyses': list(ANALYSIS_NAMES),
                'transforms': []
            },
            'diagnostics': {
                'color': False
            },
            'output': {
                'runtime_suffix': '.rtf.txt',
                'upir_suffix': '.upir'
            }
        }
