"""
测试命令行界面
"""

import contextlib
import io
import os
import shutil
import tempfile
import unittest

import yaml

from src.ui import CLIUI

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def fixture(name: str) -> str:
    return os.path.join(FIXTURES, name)


class TestCLI(unittest.TestCase):
    """命令行界面测试类"""

    def setUp(self):
        """测试前准备"""
        self.temp_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.temp_dir, "config.yaml")
        with open(self.config_file, 'w', encoding='utf-8') as f:
            yaml.dump({"logging": {"level": "WARNING"}}, f)

    def tearDown(self):
        """测试后清理"""
        shutil.rmtree(self.temp_dir)

    def invoke(self, *argv: str):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stderr(io.StringIO()):
            code = CLIUI(stdout, stderr).run(list(argv) + ["--config", self.config_file])
        return code, stdout.getvalue(), stderr.getvalue()

    def test_emit_upir_same_for_omp_and_acc(self):
        """测试 OpenMP 与 OpenACC 版 AXPY 输出逐字节相同的 UPIR"""
        code_omp, omp, _ = self.invoke(fixture("axpy_omp.ukl"), "--emit", "upir")
        code_acc, acc, _ = self.invoke(fixture("axpy_acc.ukl"), "--emit", "upir")
        self.assertEqual((code_omp, code_acc), (0, 0))
        self.assertTrue(omp.startswith("upir.module {"))
        self.assertEqual(omp, acc)

    def test_default_emit_is_upir(self):
        """测试不给 --emit 时输出 UPIR"""
        code, out, _ = self.invoke(fixture("axpy_omp.ukl"))
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("upir.module {"))

    def test_upir_input(self):
        """测试读取 .upir 文本"""
        code, out, _ = self.invoke(fixture(os.path.join("corpus", "tasks.upir")), "--passes", "")
        self.assertEqual(code, 0)
        self.assertIn("upir.ext attach(#", out)

    def test_run(self):
        """测试解释执行并打印参数"""
        code, out, _ = self.invoke(fixture("axpy_omp.ukl"), "--run", "--units", "8",
                                   "--input", "x=1,2,3,4,y=1,1,1,1,a=2,n=4")
        self.assertEqual(code, 0)
        self.assertIn("y = [3.0, 5.0, 7.0, 9.0]", out.splitlines())
        self.assertNotIn("upir.module", out)

        code, out, _ = self.invoke(fixture("reduction_sum.ukl"), "--run", "--serial",
                                   "--input", "n=10", "--input", "out=0")
        self.assertEqual(code, 0)
        self.assertIn("out = [55]", out)

    def test_compare_serial(self):
        """测试并行结果与串行参照比较"""
        code, out, err = self.invoke(fixture("barrier_phases.ukl"), "--run", "--compare-serial",
                                     "--input", "n=4,a=1,2,3,4,b=0,0,0,0")
        self.assertEqual((code, err), (0, ""))
        self.assertIn("b = [8.0, 6.0, 4.0, 2.0]", out)

    def test_run_with_runtime_replay(self):
        """测试 --emit runtime 与 --run 同时给出时先输出运行时形式"""
        code, out, _ = self.invoke(fixture("axpy_omp.ukl"), "--emit", "runtime", "--run",
                                   "--input", "x=1,2,3,4,y=1,1,1,1,a=2,n=4")
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("runtime.form {"))
        self.assertIn("y = [3.0, 5.0, 7.0, 9.0]", out)

    def test_other_emit_kinds(self):
        """测试反向生成与方言导出"""
        _, omp, _ = self.invoke(fixture("axpy_acc.ukl"), "--emit", "openmp")
        self.assertIn("#pragma omp target parallel for num_threads(1024)", omp)
        _, acc, _ = self.invoke(fixture("axpy_omp.ukl"), "--emit", "openacc")
        self.assertIn("#pragma acc parallel loop num_workers(1024)", acc)
        _, dialect, _ = self.invoke(fixture("axpy_omp.ukl"), "--emit", "accdialect")
        self.assertEqual(dialect.splitlines()[0], "// @axpy")

    def test_trace_schedule(self):
        """测试打印分块记录"""
        code, out, _ = self.invoke(fixture("reduction_sum.ukl"), "--trace-schedule", "--units", "2",
                                   "--input", "n=10")
        self.assertEqual(code, 0)
        self.assertIn("policy=static trip=10 units=2", out)
        self.assertIn("  unit 0: [0,5)", out)

    def test_verify_roundtrip(self):
        """测试往返检查通过时不输出产物"""
        code, out, _ = self.invoke(fixture("matvec_omp.ukl"), "--verify-roundtrip")
        self.assertEqual((code, out), (0, ""))

    def test_output_directory(self):
        """测试 -o 指向目录时按产物类型命名"""
        code, out, _ = self.invoke(fixture("axpy_omp.ukl"), "--emit", "runtime", "-o", self.temp_dir)
        self.assertEqual((code, out), (0, ""))
        with open(os.path.join(self.temp_dir, "axpy_omp.rtf.txt"), 'r', encoding='utf-8') as f:
            self.assertTrue(f.read().startswith("runtime.form {"))

    def test_errors_exit_one(self):
        """测试输入与处理错误返回 1 并输出诊断"""
        code, out, err = self.invoke(fixture("bad_syntax.ukl"))
        self.assertEqual((code, out), (1, ""))
        self.assertTrue(err.startswith(f"{fixture('bad_syntax.ukl')}:2:"))
        self.assertIn("error:", err)

        code, _, err = self.invoke(fixture("unbalanced_alloc.upir"), "--run", "--input", "out=0")
        self.assertEqual(code, 1)
        self.assertIn("error:", err)

        code, _, err = self.invoke(fixture("taskloop_scale.ukl"), "--emit", "openacc")
        self.assertEqual(code, 1)

        code, _, err = self.invoke(fixture("axpy_omp.ukl"), "--passes", "liveness")
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith(f"{fixture('axpy_omp.ukl')}:1:1: error:"))

        code, _, _ = self.invoke(os.path.join(self.temp_dir, "missing.ukl"))
        self.assertEqual(code, 1)

    def test_usage_errors_exit_two(self):
        """测试用法错误返回 2"""
        self.assertEqual(self.invoke("--emit", "upir")[0], 2)
        self.assertEqual(self.invoke(fixture("axpy_omp.ukl"), "--emit", "llvm")[0], 2)
        self.assertEqual(self.invoke(fixture("axpy_omp.ukl"), "--units", "0")[0], 2)


if __name__ == "__main__":
    unittest.main()
