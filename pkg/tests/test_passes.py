"""
测试变换：barrier 消除、循环合并、流程管理、反向生成、acc 方言导出与运行时下降
"""

import os
import unittest

from src.analysis import materialize_implicit_sync, run_analyses
from src.frontend import parse_kernel_source
from src.frontend.ast_nodes import BinOp, Ident, IntLit
from src.passes import (
    build_pipeline, collapse_loops, collapse_module, count_barriers, eliminate_redundant_barriers,
    export_acc_dialect, format_runtime, lower_to_runtime, unparse_to_openacc, unparse_to_openmp
)
from src.passes.lowering import BY_REFERENCE, BY_VALUE, RuntimeCall
from src.upir import LoopNode, SyncNode, UpirModule, build_upir, print_upir, validate_upir, walk
from src.upir.nodes import DeclNode
from src.utils.errors import CollapseError, PassError, UnrepresentableError

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

KERNEL_FIXTURES = (
    "axpy_omp.ukl", "axpy_acc.ukl", "barrier_phases.ukl", "reduction_sum.ukl", "matvec_omp.ukl",
    "matmul_omp.ukl", "stencil_omp.ukl", "tasks.ukl", "taskloop_scale.ukl", "critical_count.ukl",
)

GRID = ("void grid(int n, int m, float a[n][m]) {\n"
        "#pragma omp parallel for collapse(2) num_threads(4)\n"
        "    for (int i = 0; i < 4; i++)\n"
        "        for (int j = 0; j < 3; j++) {\n"
        "            a[i][j] = 1.0;\n"
        "        }\n}\n")


def build_fixture(name: str):
    with open(os.path.join(FIXTURES, name), 'r', encoding='utf-8') as f:
        return build_upir(parse_kernel_source(f.read(), file=name))


def first_loop(module) -> LoopNode:
    return next(n for n in walk(module) if isinstance(n, LoopNode))


def primitives(region):
    return [n.primitive for n in region if isinstance(n, RuntimeCall)]


class TestBarrierElimination(unittest.TestCase):
    """barrier 消除测试类"""

    def test_never_increases(self):
        """测试消除后 barrier 数不增加且模块仍合法"""
        for name in KERNEL_FIXTURES:
            with self.subTest(name=name):
                module = materialize_implicit_sync(build_fixture(name))
                result = eliminate_redundant_barriers(module)
                self.assertLessEqual(count_barriers(result), count_barriers(module))
                self.assertEqual(validate_upir(result), [])

    def test_implicit_next_to_explicit(self):
        """测试隐式 barrier 紧挨显式 barrier 时合并并保留显式的"""
        module = materialize_implicit_sync(build_fixture("barrier_phases.ukl"))
        self.assertEqual(count_barriers(module), 3)
        result = eliminate_redundant_barriers(module)
        self.assertEqual(count_barriers(result), 2)

        barriers = [n for n in walk(result) if isinstance(n, SyncNode) and n.name == "barrier"]
        self.assertEqual([b.implicit for b in barriers], [False, True])
        # 输入不变
        self.assertEqual(count_barriers(module), 3)

    def test_nothing_to_merge(self):
        """测试没有相邻 barrier 时模块不变"""
        module = materialize_implicit_sync(build_fixture("axpy_omp.ukl"))
        self.assertEqual(print_upir(eliminate_redundant_barriers(module)), print_upir(module))


class TestLoopCollapse(unittest.TestCase):
    """循环合并测试类"""

    def test_rectangular_grid(self):
        """测试 4x3 嵌套合并为 12 次迭代并还原原变量"""
        module = build_upir(parse_kernel_source(GRID))
        loop = first_loop(module)
        self.assertEqual(loop.collapse, 2)

        collapsed = collapse_loops(loop)
        self.assertEqual(collapsed.var, "i_j__flat")
        self.assertEqual(collapsed.lower, IntLit(0))
        self.assertEqual(collapsed.upper, IntLit(12))
        self.assertEqual(collapsed.collapse, 1)
        self.assertEqual(collapsed.id, loop.id)
        self.assertEqual(collapsed.parallel, loop.parallel)

        decl_i, decl_j = collapsed.body[:2]
        self.assertIsInstance(decl_i, DeclNode)
        self.assertEqual((decl_i.name, decl_i.init), ("i", BinOp("/", Ident("i_j__flat"), IntLit(3))))
        self.assertEqual((decl_j.name, decl_j.init), ("j", BinOp("%", Ident("i_j__flat"), IntLit(3))))

        # 迭代空间一一对应
        pairs = [(t // 3, t % 3) for t in range(12)]
        self.assertEqual(pairs, [(i, j) for i in range(4) for j in range(3)])

    def test_collapse_module(self):
        """测试模块级合并后没有 collapse>1 的循环且 id 不冲突"""
        result = collapse_module(build_fixture("matmul_omp.ukl"))
        loops = [n for n in walk(result) if isinstance(n, LoopNode)]
        self.assertTrue(all(loop.collapse == 1 for loop in loops))
        self.assertEqual(loops[0].var, "i_j__flat")
        self.assertEqual(validate_upir(result), [])

        # 非常量的每层迭代次数在相乘前截到 0
        clamped = BinOp("*", BinOp(">", Ident("n"), IntLit(0)), Ident("n"))
        self.assertEqual(loops[0].upper, BinOp("*", clamped, clamped))

    def test_triangular_nest(self):
        """测试内层边界依赖外层变量时报错"""
        module = build_fixture("triangular.ukl")
        with self.assertRaises(CollapseError):
            collapse_module(module)
        with self.assertRaises(CollapseError):
            collapse_loops(first_loop(module))


class TestPipeline(unittest.TestCase):
    """流程组装测试类"""

    def test_analyses_first(self):
        """测试分析排在变换之前且不重复"""
        manager = build_pipeline(["barrier-elim", "implicit-sync", "barrier-elim"])
        self.assertEqual([p.name for p in manager.passes], ["implicit-sync", "barrier-elim"])

        result = manager.run(build_fixture("barrier_phases.ukl"))
        self.assertEqual(count_barriers(result), 2)

    def test_empty_pipeline(self):
        """测试空流程原样返回"""
        module = build_fixture("axpy_omp.ukl")
        self.assertEqual(print_upir(build_pipeline([]).run(module)), print_upir(module))

    def test_unknown_pass(self):
        """测试未知的 pass 名"""
        with self.assertRaises(PassError):
            build_pipeline(["collapse", "vectorize"])


class TestUnparse(unittest.TestCase):
    """反向生成测试类"""

    def test_axpy_openmp(self):
        """测试 AXPY 写回 OpenMP 组合指令"""
        text = unparse_to_openmp(build_fixture("axpy_omp.ukl"))
        self.assertIn("#pragma omp target parallel for num_threads(1024)", text)
        self.assertIn("void axpy(", text)

    def test_axpy_openacc(self):
        """测试 AXPY 写回 OpenACC 组合指令"""
        text = unparse_to_openacc(build_fixture("axpy_omp.ukl"))
        self.assertIn("#pragma acc parallel loop num_workers(1024)", text)

    def test_rebuilds_to_same_upir(self):
        """测试输出重新解析构建后与原模块一致"""
        for name in ("axpy_omp.ukl", "reduction_sum.ukl", "matmul_omp.ukl"):
            with self.subTest(name=name):
                module = build_fixture(name)
                text = unparse_to_openmp(module)
                rebuilt = build_upir(parse_kernel_source(text))
                self.assertEqual(print_upir(rebuilt), print_upir(module))

    def test_analysis_results_ignored(self):
        """测试分析补出的内容不出现在输出里"""
        module = build_fixture("axpy_omp.ukl")
        self.assertEqual(unparse_to_openmp(run_analyses(module)), unparse_to_openmp(module))

    def test_cross_translation(self):
        """测试能表达的内核在两种模型之间互译后重建一致"""
        for name in KERNEL_FIXTURES:
            module = build_fixture(name)
            expected = print_upir(module)
            for unparse in (unparse_to_openmp, unparse_to_openacc):
                with self.subTest(name=name, target=unparse.__name__):
                    try:
                        text = unparse(module)
                    except UnrepresentableError:
                        continue
                    self.assertEqual(print_upir(build_upir(parse_kernel_source(text))), expected)

    def test_unrepresentable_in_openacc(self):
        """测试 OpenACC 无法表达的构造"""
        for name in ("taskloop_scale.ukl", "tasks.ukl"):
            with self.subTest(name=name):
                with self.assertRaises(UnrepresentableError):
                    unparse_to_openacc(build_fixture(name))


class TestAccDialect(unittest.TestCase):
    """acc 方言导出测试类"""

    def test_axpy(self):
        """测试 AXPY 导出的开头"""
        lines = export_acc_dialect(build_fixture("axpy_omp.ukl")).splitlines()
        self.assertEqual(lines[0], "// @axpy")
        body = [line.strip() for line in lines if not line.startswith("//")]
        self.assertTrue(body[0].startswith("acc.parallel num_workers(%c1024)"))
        self.assertTrue(any(line.startswith("acc.loop worker") for line in body))
        self.assertTrue(any(line.startswith("scf.for %i = %c0 to %n step %c1") for line in body))

    def test_same_for_both_sources(self):
        """测试 OpenMP 与 OpenACC 源码导出一致"""
        self.assertEqual(export_acc_dialect(build_fixture("axpy_omp.ukl")),
                         export_acc_dialect(build_fixture("axpy_acc.ukl")))

    def test_empty_module(self):
        """测试空模块导出空串"""
        self.assertEqual(export_acc_dialect(UpirModule()), "")

    def test_taskloop_rejected(self):
        """测试 taskloop 无法导出"""
        with self.assertRaises(UnrepresentableError):
            export_acc_dialect(build_fixture("taskloop_scale.ukl"))


class TestLowering(unittest.TestCase):
    """运行时下降测试类"""

    def test_axpy_call_chain(self):
        """测试 AXPY 降级为 launch_task -> fork_units -> dispatch_loop -> barrier"""
        form = lower_to_runtime(build_fixture("axpy_omp.ukl"))
        body = form.functions[0].body
        self.assertEqual(primitives(body), ["launch_task"])
        launch = body[0]
        self.assertEqual(launch.spec.kind, "offload")
        self.assertEqual(launch.spec.space, "device:nvptx:0")

        task_fn = form.outlined[launch.fn]
        self.assertEqual(primitives(task_fn.body), ["map_enter", "fork_units", "map_exit"])
        fork = task_fn.body[1]
        self.assertEqual(fork.spec.num_units, IntLit(1024))
        self.assertFalse(fork.spec.unit_dependent)

        spmd_fn = form.outlined[fork.fn]
        self.assertEqual(primitives(spmd_fn.body), ["dispatch_loop", "barrier"])
        dispatch = spmd_fn.body[0]
        self.assertEqual(dispatch.spec.var, "i")
        self.assertEqual(primitives(form.outlined[dispatch.fn].body), [])

    def test_capture_environment(self):
        """测试外提函数按共享属性决定捕获方式"""
        form = lower_to_runtime(build_fixture("axpy_omp.ukl"))
        launch = form.functions[0].body[0]
        env = {c.symbol: c for c in form.outlined[launch.fn].env}
        self.assertEqual(env["a"].mode, BY_VALUE)
        self.assertEqual(env["n"].mode, BY_VALUE)
        self.assertEqual(env["x"].mode, BY_REFERENCE)
        self.assertEqual(env["y"].mode, BY_REFERENCE)

    def test_serial_only(self):
        """测试没有并行构造时不产生运行时调用"""
        form = lower_to_runtime(build_fixture("serial_only.ukl"))
        self.assertEqual(form.calls(), [])
        self.assertEqual(form.outlined, {})

    def test_reduction_and_collapse(self):
        """测试 reduction 降级为 reduce，collapse 在降级前展开"""
        form = lower_to_runtime(build_fixture("reduction_sum.ukl"))
        self.assertIn("reduce", [c.primitive for c in form.calls()])

        form = lower_to_runtime(build_fixture("matmul_omp.ukl"))
        dispatch = next(c for c in form.calls() if c.primitive == "dispatch_loop")
        self.assertEqual(dispatch.spec.var, "i_j__flat")

    def test_same_runtime_form_for_both_sources(self):
        """测试 OpenMP 与 OpenACC 版内核降级结果相同"""
        for kernel in ("axpy", "matmul", "matvec", "stencil"):
            with self.subTest(kernel=kernel):
                omp = format_runtime(lower_to_runtime(build_fixture(f"{kernel}_omp.ukl")))
                acc = format_runtime(lower_to_runtime(build_fixture(f"{kernel}_acc.ukl")))
                self.assertEqual(omp, acc)

    def test_format(self):
        """测试运行时形式的文本"""
        text = format_runtime(lower_to_runtime(build_fixture("axpy_omp.ukl")))
        self.assertTrue(text.startswith("runtime.form {\n"))
        self.assertTrue(text.endswith("}\n"))
        self.assertIn("runtime.launch_task", text)
        self.assertIn("runtime.fork_units", text)
        self.assertIn("num_units(%c1024)", text)


if __name__ == "__main__":
    unittest.main()
