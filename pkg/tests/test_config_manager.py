"""
测试配置管理器
"""

import unittest
import os
import tempfile
import shutil
import yaml

from src.config.config_manager import ANALYSIS_NAMES, ConfigManager
from src.utils.errors import ConfigError


class TestConfigManager(unittest.TestCase):
    """配置管理器测试类"""

    def setUp(self):
        """测试前准备"""
        # 创建临时目录
        self.temp_dir = tempfile.mkdtemp()

        # 创建测试配置文件
        self.config_file = os.path.join(self.temp_dir, "test_config.yaml")
        test_config = {
            "logging": {
                "level": "INFO"
            },
            "interpreter": {
                "default_units": 8,
                "max_steps": 5000
            },
            "pipeline": {
                "analyses": ["data-attributes", "implicit-sync"],
                "transforms": ["barrier-elim"]
            }
        }

        with open(self.config_file, 'w', encoding='utf-8') as f:
            yaml.dump(test_config, f, default_flow_style=False, allow_unicode=True)

    def tearDown(self):
        """测试后清理"""
        # 删除临时目录
        shutil.rmtree(self.temp_dir)

    def test_load_config(self):
        """测试加载配置"""
        config_manager = ConfigManager(self.config_file)
        settings = config_manager.settings

        self.assertEqual(settings.logging.level, "INFO")
        self.assertEqual(settings.interpreter.default_units, 8)
        self.assertEqual(settings.interpreter.max_steps, 5000)
        self.assertEqual(settings.pipeline.analyses, ["data-attributes", "implicit-sync"])
        self.assertEqual(settings.pipeline.transforms, ["barrier-elim"])

        # 未给出的字段取默认值
        self.assertEqual(settings.interpreter.default_teams, 1)
        self.assertEqual(settings.output.upir_suffix, ".upir")
        self.assertFalse(settings.diagnostics.color)

    def test_missing_file_uses_defaults(self):
        """测试配置文件不存在时使用默认配置"""
        config_manager = ConfigManager(os.path.join(self.temp_dir, "missing.yaml"))
        settings = config_manager.settings

        self.assertEqual(settings.logging.level, "WARNING")
        self.assertEqual(settings.interpreter.default_units, 4)
        self.assertEqual(settings.pipeline.analyses, ANALYSIS_NAMES)
        self.assertEqual(settings.pipeline.transforms, [])

    def test_malformed_file_uses_defaults(self):
        """测试格式错误的配置文件回退到默认配置"""
        broken = os.path.join(self.temp_dir, "broken.yaml")
        with open(broken, 'w', encoding='utf-8') as f:
            f.write("interpreter: [unclosed\n")

        config_manager = ConfigManager(broken)
        self.assertEqual(config_manager.settings.interpreter.default_units, 4)

    def test_invalid_value_raises(self):
        """测试非法配置值"""
        invalid = os.path.join(self.temp_dir, "invalid.yaml")
        with open(invalid, 'w', encoding='utf-8') as f:
            yaml.dump({"interpreter": {"default_units": 0}}, f)

        with self.assertRaises(ConfigError):
            ConfigManager(invalid)

    def test_update_config(self):
        """测试更新配置"""
        config_manager = ConfigManager(self.config_file)

        config_manager.update_config("interpreter", "default_teams", 2)
        self.assertEqual(config_manager.get_interpreter_config().default_teams, 2)

        with self.assertRaises(ConfigError):
            config_manager.update_config("interpreter", "max_steps", -1)

    def test_save_config(self):
        """测试保存配置"""
        config_manager = ConfigManager(self.config_file)
        config_manager.update_config("pipeline", "transforms", ["barrier-elim", "collapse"])
        config_manager.save_config()

        # 重新加载配置
        reloaded = ConfigManager(self.config_file)
        self.assertEqual(reloaded.get_pipeline_config().transforms, ["barrier-elim", "collapse"])
        self.assertEqual(reloaded.get_section("logging")["level"], "INFO")


if __name__ == "__main__":
    unittest.main()
