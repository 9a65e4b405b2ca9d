"""
测试工具函数
"""

import unittest
import os
import tempfile
import shutil
from unittest.mock import patch

from src.utils.errors import InputBindingError, SourcePosition, UpircError
from src.utils.utils import (
    COLOR_ENV, color_enabled, format_diagnostic, parse_input_bindings, read_source, write_output
)


class TestUtils(unittest.TestCase):
    """工具函数测试类"""

    def setUp(self):
        """测试前准备"""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """测试后清理"""
        shutil.rmtree(self.temp_dir)

    def test_parse_input_bindings(self):
        """测试解析输入绑定"""
        bindings = parse_input_bindings(["x=1,2,3,4,y=1,1,1,1,a=2,n=4"])
        self.assertEqual(bindings["x"], [1, 2, 3, 4])
        self.assertEqual(bindings["y"], [1, 1, 1, 1])
        self.assertEqual(bindings["a"], [2])
        self.assertEqual(bindings["n"], [4])

        # 多个 --input 合并，浮点数与方括号
        bindings = parse_input_bindings(["a=2.5", "x=[0.5, 1.5]"])
        self.assertEqual(bindings["a"], [2.5])
        self.assertEqual(bindings["x"], [0.5, 1.5])

    def test_parse_input_bindings_errors(self):
        """测试非法的输入绑定"""
        with self.assertRaises(InputBindingError):
            parse_input_bindings(["1,2,x=3"])
        with self.assertRaises(InputBindingError):
            parse_input_bindings(["x=abc"])
        with self.assertRaises(InputBindingError):
            parse_input_bindings(["2x=1"])

    def test_format_diagnostic(self):
        """测试诊断信息格式"""
        error = UpircError("未声明的标识符: z", SourcePosition("k.ukl", 3, 7))
        self.assertEqual(format_diagnostic(error, "other.ukl"), "k.ukl:3:7: error: 未声明的标识符: z")

        # 没有位置时指向文件开头
        error = UpircError("无法读取")
        self.assertEqual(format_diagnostic(error, "k.ukl"), "k.ukl:1:1: error: 无法读取")

        # 位置里只有行列时使用传入的文件名
        error = UpircError("语法错误", SourcePosition("<input>", 2, 1))
        self.assertEqual(format_diagnostic(error, "k.ukl"), "k.ukl:2:1: error: 语法错误")

        colored = format_diagnostic(error, "k.ukl", color=True)
        self.assertIn("\033[31m", colored)
        self.assertIn("语法错误", colored)

    def test_color_enabled(self):
        """测试着色开关"""
        with patch.dict(os.environ, {}, clear=True):
            self.assertFalse(color_enabled())
            self.assertTrue(color_enabled(True))
        with patch.dict(os.environ, {COLOR_ENV: "1"}):
            self.assertTrue(color_enabled())
        with patch.dict(os.environ, {COLOR_ENV: "0"}):
            self.assertFalse(color_enabled(True))

    def test_write_and_read(self):
        """测试写出与读取产物"""
        target = os.path.join(self.temp_dir, "out", "axpy.upir")
        write_output("upir.module {\n}\n", target)
        self.assertTrue(os.path.exists(target))
        self.assertEqual(read_source(target), "upir.module {\n}\n")

        with open(target, 'rb') as f:
            self.assertNotIn(b"\r\n", f.read())


if __name__ == "__main__":
    unittest.main()
