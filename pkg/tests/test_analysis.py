"""
测试分析：数据属性、访问模式、隐式同步、嵌套与分支发散
"""

import os
import unittest

from src.analysis import (
    ANALYSES, annotate_nesting, detect_divergence, infer_access_modes, infer_data_attributes,
    materialize_implicit_sync, run_analyses
)
from src.frontend import parse_kernel_source
from src.upir import (
    LoopNode, SpmdNode, SyncNode, TaskNode, build_upir, parse_upir, print_upir, validate_upir, walk
)
from src.upir.nodes import IfNode
from src.utils.errors import AnalysisError, PassError

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def build_fixture(name: str):
    with open(os.path.join(FIXTURES, name), 'r', encoding='utf-8') as f:
        return build_upir(parse_kernel_source(f.read(), file=name))


def first(module, cls):
    return next(n for n in walk(module) if isinstance(n, cls))


def items_of(node):
    return {item.symbol: item for item in node.data}


def implicit_barriers(module):
    return [n for n in walk(module) if isinstance(n, SyncNode) and n.name == "barrier" and n.implicit]


class TestDataAttributes(unittest.TestCase):
    """数据属性推断测试类"""

    def test_offload_defaults(self):
        """测试卸载任务上的缺省属性"""
        module = infer_data_attributes(build_fixture("axpy_omp.ukl"))
        task = items_of(first(module, TaskNode))
        self.assertEqual(set(task), {"a", "n", "x", "y"})
        self.assertEqual(task["a"].sharing.value, "firstprivate")
        self.assertEqual(task["a"].mapping.value, "to")
        self.assertEqual(task["x"].sharing.value, "shared")
        self.assertEqual(task["x"].mapping.value, "tofrom")
        self.assertEqual(task["x"].access, "read-only")
        self.assertEqual(task["y"].access, "read-write")
        for item in task.values():
            self.assertTrue(item.is_complete())
            self.assertEqual(item.sharing.visibility, "implicit")
            self.assertEqual(item.allocator, "default_mem_alloc")

        loop = items_of(first(module, LoopNode))
        self.assertEqual(loop["i"].sharing.value, "private")
        self.assertEqual(loop["y"].sharing.value, "shared")
        self.assertEqual(loop["y"].mapping.value, "none")

    def test_cuda_launch_defaults(self):
        """测试 CUDA 启动的卸载任务：标量实参按值传递为 firstprivate"""
        module = run_analyses(build_fixture("axpy_cuda.ukl"))
        task = items_of(first(module, TaskNode))
        self.assertEqual(set(task), {"a", "n", "x", "y"})
        for scalar in ("a", "n"):
            self.assertEqual(task[scalar].sharing.value, "firstprivate")
            self.assertEqual(task[scalar].mapping.value, "to")
            self.assertEqual(task[scalar].access, "read-only")
        for array in ("x", "y"):
            self.assertEqual(task[array].sharing.value, "shared")
            self.assertEqual(task[array].mapping.value, "tofrom")
            self.assertEqual(task[array].access, "read-write")

    def test_explicit_attributes_kept(self):
        """测试显式属性保持 explicit"""
        source = ("void f(int n, float x[n], float y[n]) {\n"
                  "#pragma omp target parallel for map(to: x) num_threads(8)\n"
                  "    for (int i = 0; i < n; i++) { y[i] = x[i]; }\n}\n")
        module = infer_data_attributes(build_upir(parse_kernel_source(source)))
        task = items_of(first(module, TaskNode))
        self.assertEqual(task["x"].mapping.value, "to")
        self.assertEqual(task["x"].mapping.visibility, "explicit")
        self.assertEqual(task["y"].mapping.visibility, "implicit")
        self.assertEqual(task["y"].access, "write-only")

    def test_reduction_variable_private(self):
        """测试 reduction 变量在循环上为 private"""
        module = infer_data_attributes(build_fixture("reduction_sum.ukl"))
        loop = items_of(first(module, LoopNode))
        self.assertEqual(loop["sum"].sharing.value, "private")
        self.assertEqual(loop["sum"].access, "read-write")

    def test_input_not_modified(self):
        """测试分析不修改输入模块"""
        module = build_fixture("axpy_omp.ukl")
        before = print_upir(module)
        infer_data_attributes(module)
        self.assertEqual(print_upir(module), before)

    def test_contradictions(self):
        """测试互相矛盾的显式属性"""
        private_mapped = (
            "upir.module {\n  upir.func @f(%n: i32) {\n"
            "    upir.task offload(nvptx:0) data(%n(private(explicit), to(explicit))) {\n"
            "      upir.assign %n = %c1\n    }\n  }\n}\n"
        )
        with self.assertRaises(AnalysisError):
            infer_data_attributes(parse_upir(private_mapped))

        shared_reduction = (
            "upir.module {\n  upir.func @f(%n: i32, %s: i32) {\n    upir.spmd num_units(%c2) {\n"
            "      upir.loop induction(%i) lowerBound(%c0) upperBound(%n) step(%c1) "
            "data(%s(shared(explicit))) sync(#9) {\n"
            "        upir.loop-parallel worksharing {\n          upir.assign %s = (%s + %i)\n        }\n"
            "      }\n      #9 upir.sync reduction sync operation(+) data(%s)\n    }\n  }\n}\n"
        )
        with self.assertRaises(AnalysisError):
            infer_data_attributes(parse_upir(shared_reduction))


class TestAccessModes(unittest.TestCase):
    """访问模式推断测试类"""

    def test_fill_missing_access(self):
        """测试只填写缺少的访问模式"""
        text = (
            "upir.module {\n  upir.func @f(%n: i32, %a: i32[%c2], %b: i32[%c2]) {\n"
            "    upir.spmd num_units(%c2) data(%a(shared(explicit)), %n(shared(explicit)), "
            "%b(shared(explicit), read-write)) {\n"
            "      upir.assign %a[%c0] = %n\n      upir.assign %b[%c1] = %c0\n    }\n  }\n}\n"
        )
        module = infer_access_modes(parse_upir(text))
        spmd = items_of(first(module, SpmdNode))
        self.assertEqual(spmd["a"].access, "write-only")
        self.assertEqual(spmd["n"].access, "read-only")
        self.assertEqual(spmd["b"].access, "read-write")

    def test_call_arguments(self):
        """测试传给函数的数组按读写处理，标量按值传递只算读"""
        text = (
            "upir.module {\n  upir.func @f(%n: i32, %a: i32[%c2]) {\n"
            "    upir.spmd num_units(%c2) data(%n(shared(explicit)), %a(shared(explicit))) {\n"
            "      upir.call @helper(%n, %a)\n    }\n  }\n}\n"
        )
        spmd = items_of(first(infer_access_modes(parse_upir(text)), SpmdNode))
        self.assertEqual(spmd["n"].access, "read-only")
        self.assertEqual(spmd["a"].access, "read-write")


class TestImplicitSync(unittest.TestCase):
    """隐式同步物化测试类"""

    def test_barrier_after_worksharing_loop(self):
        """测试 worksharing 循环之后补 implicit barrier"""
        module = materialize_implicit_sync(build_fixture("axpy_omp.ukl"))
        spmd = first(module, SpmdNode)
        self.assertEqual(len(spmd.body), 2)
        self.assertIsInstance(spmd.body[0], LoopNode)
        self.assertTrue(spmd.body[1].implicit)
        self.assertEqual(len(implicit_barriers(module)), 1)

    def test_barrier_after_reduction(self):
        """测试 barrier 放在循环登记的 reduction 之后"""
        module = materialize_implicit_sync(build_fixture("reduction_sum.ukl"))
        body = first(module, SpmdNode).body
        self.assertEqual([type(n).__name__ for n in body], ["LoopNode", "SyncNode", "SyncNode"])
        self.assertEqual(body[1].name, "reduction")
        self.assertTrue(body[2].implicit)

    def test_explicit_barrier_handling(self):
        """测试显式 barrier 旁边的隐式 barrier"""
        module = build_fixture("barrier_phases.ukl")
        self.assertEqual(len(implicit_barriers(materialize_implicit_sync(module))), 2)
        self.assertEqual(len(implicit_barriers(materialize_implicit_sync(module, reuse_explicit=True))), 1)

    def test_idempotent(self):
        """测试重复物化不会重复添加"""
        once = materialize_implicit_sync(build_fixture("barrier_phases.ukl"))
        twice = materialize_implicit_sync(once)
        self.assertEqual(print_upir(twice), print_upir(once))

    def test_nowait_loop(self):
        """测试 nowait 循环后不补 barrier，spmd 末尾仍补"""
        source = ("void f(int n, float x[n]) {\n#pragma omp parallel num_threads(2)\n    {\n"
                  "#pragma omp for nowait\n        for (int i = 0; i < n; i++) { x[i] = 1.0; }\n"
                  "        x[0] = 2.0;\n    }\n}\n")
        module = materialize_implicit_sync(build_upir(parse_kernel_source(source)))
        body = first(module, SpmdNode).body
        self.assertEqual(len(body), 3)
        self.assertFalse(isinstance(body[1], SyncNode))
        self.assertTrue(body[2].implicit)


class TestNestingAndDivergence(unittest.TestCase):
    """嵌套标注与分支发散测试类"""

    NESTED = (
        "upir.module {\n  upir.func @f(%n: i32) {\n"
        "    upir.spmd num_units(%c2) {\n"
        "      upir.spmd num_units(%c2) {\n        upir.spmd num_units(%c2) {\n        }\n      }\n"
        "      upir.spmd num_units(%c2) {\n      }\n"
        "    }\n  }\n}\n"
    )

    def test_nesting_levels(self):
        """测试嵌套层次与父子关系"""
        module = annotate_nesting(parse_upir(self.NESTED))
        outer, middle, inner, sibling = [n for n in walk(module) if isinstance(n, SpmdNode)]
        self.assertEqual((outer.nested_level, middle.nested_level, inner.nested_level, sibling.nested_level),
                         (2, 1, 0, 0))
        self.assertEqual(outer.nested_child, middle.id)
        self.assertEqual(middle.nested_child, inner.id)
        self.assertIsNone(outer.nested_parent)
        self.assertEqual(middle.nested_parent, outer.id)
        self.assertEqual(sibling.nested_parent, outer.id)
        self.assertEqual(inner.nested_parent, middle.id)
        self.assertEqual(validate_upir(module), [])

    def test_divergent_branches(self):
        """测试传递依赖单元编号的分支"""
        text = (
            "upir.module {\n  upir.func @f(%n: i32, %a: i32[%c4]) {\n"
            "    upir.spmd num_units(%c4) {\n"
            "      upir.decl %me : i32 = @__unit_id()\n"
            "      upir.decl %k : i32 = (%me + %c1)\n"
            "      upir.if (%k < %c2) {\n        upir.assign %a[%me] = %c1\n      }\n"
            "      upir.if (%n < %c2) {\n        upir.assign %a[%c0] = %c2\n      }\n"
            "    }\n  }\n}\n"
        )
        module = detect_divergence(parse_upir(text))
        spmd = first(module, SpmdNode)
        ifs = [n for n in walk(module) if isinstance(n, IfNode)]
        self.assertEqual(spmd.branch, [ifs[0].id])

        # 再次检测不会重复登记
        self.assertEqual(first(detect_divergence(module), SpmdNode).branch, [ifs[0].id])

    def test_cuda_guard_branch(self):
        """测试 CUDA kernel 内的边界判断记到启动它的 spmd 上"""
        module = run_analyses(build_fixture("axpy_cuda.ukl"))
        spmd = first(module, SpmdNode)
        guard = first(module.function("axpy_kernel"), IfNode)
        self.assertEqual(spmd.branch, [guard.id])
        self.assertEqual(validate_upir(module), [])
        self.assertIn(f"branch(#{guard.id})", print_upir(module))

    def test_call_argument_carries_unit_dependence(self):
        """测试依赖单元编号的实参使被调函数中的分支发散"""
        text = (
            "upir.module {\n  upir.func @helper(%k: i32, %a: i32[%c4]) {\n"
            "    upir.if (%k < %c2) {\n      upir.assign %a[%k] = %c1\n    }\n  }\n"
            "  upir.func @f(%a: i32[%c4]) {\n    upir.spmd num_units(%c4) {\n"
            "      upir.decl %me : i32 = @__unit_id()\n      upir.call @helper(%me, %a)\n"
            "      upir.call @helper(%c0, %a)\n    }\n  }\n}\n"
        )
        module = detect_divergence(parse_upir(text))
        guard = first(module.function("helper"), IfNode)
        self.assertEqual(first(module, SpmdNode).branch, [guard.id])

    def test_nested_branches_built(self):
        """测试嵌套 if 与嵌套 spmd：只登记依赖单元编号的分支，且记在最近的 spmd 上"""
        source = (
            "void f(int n, float a[n]) {\n"
            "#pragma omp parallel num_threads(4)\n"
            "    {\n"
            "        int me = __unit_id();\n"
            "        if (n > 2) {\n"
            "            if (me < 2) {\n"
            "                a[me] = 1.0;\n"
            "            }\n"
            "        }\n"
            "#pragma omp parallel num_threads(2)\n"
            "        {\n"
            "            if (__unit_id() == 0) {\n"
            "                a[0] = 2.0;\n"
            "            }\n"
            "        }\n"
            "    }\n"
            "}\n"
        )
        module = detect_divergence(build_upir(parse_kernel_source(source)))
        outer, inner = [n for n in walk(module) if isinstance(n, SpmdNode)]
        uniform, divergent, inner_guard = [n for n in walk(module) if isinstance(n, IfNode)]
        self.assertEqual(outer.branch, [divergent.id])
        self.assertEqual(inner.branch, [inner_guard.id])
        self.assertNotIn(uniform.id, outer.branch + inner.branch)


class TestRunAnalyses(unittest.TestCase):
    """分析调度测试类"""

    def test_fixed_order(self):
        """测试分析顺序固定"""
        self.assertEqual(list(ANALYSES),
                         ["data-attributes", "access-modes", "implicit-sync", "nesting", "divergence"])

    def test_run_all(self):
        """测试执行全部分析后仍是合法模块"""
        for name in ("axpy_omp.ukl", "barrier_phases.ukl", "tasks.ukl", "matvec_acc.ukl"):
            with self.subTest(name=name):
                module = run_analyses(build_fixture(name))
                self.assertEqual(validate_upir(module), [])
                text = print_upir(module)
                self.assertEqual(print_upir(parse_upir(text)), text)
                self.assertIn("implicit", text)

    def test_selected_and_unknown(self):
        """测试只执行选中的分析与未知分析名"""
        module = run_analyses(build_fixture("axpy_omp.ukl"), ["implicit-sync"])
        self.assertEqual(first(module, TaskNode).data, [])
        self.assertEqual(len(implicit_barriers(module)), 1)

        with self.assertRaises(PassError):
            run_analyses(build_fixture("axpy_omp.ukl"), ["liveness"])


if __name__ == "__main__":
    unittest.main()
