"""
测试 UPIR 核心：构建、打印、解析与校验
"""

import os
import unittest

from src.frontend import parse_kernel_source
from src.frontend.ast_nodes import ArraySection, BinOp, Ident, Intrinsic, IntLit
from src.upir import (
    LoopNode, LoopParallel, SpmdNode, SyncNode, TaskNode, UpirFunction, UpirModule, build_upir,
    check_upir, parse_upir, print_upir, validate_upir, walk
)
from src.upir.nodes import (
    Attribute, CallNode, DataItem, DataMovementNode, DataRegionNode, Distribution, ExtensionNode, IfNode,
    UpirParam
)
from src.utils.errors import UpirBuildError, UpirSyntaxError, UpirValidationError

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")
CORPUS = os.path.join(FIXTURES, "corpus")

KERNEL_PAIRS = ("axpy", "matmul", "matvec", "stencil")


def read_fixture(*parts: str) -> str:
    with open(os.path.join(FIXTURES, *parts), 'r', encoding='utf-8') as f:
        return f.read()


def build_fixture(name: str) -> UpirModule:
    return build_upir(parse_kernel_source(read_fixture(name), file=name))


class TestBuilder(unittest.TestCase):
    """UPIR 构建测试类"""

    def test_axpy_offload_shape(self):
        """测试 target parallel for 映射为 offload task、spmd 与 worksharing 循环"""
        module = build_fixture("axpy_omp.ukl")
        function = module.function("axpy")
        self.assertEqual(len(function.body), 1)

        task = function.body[0]
        self.assertIsInstance(task, TaskNode)
        self.assertEqual(task.kind, "offload")
        self.assertEqual(task.space, "nvptx:0")

        spmd = task.body[0]
        self.assertIsInstance(spmd, SpmdNode)
        self.assertEqual(spmd.targets, ["gpu"])
        self.assertEqual(spmd.num_units, IntLit(1024))

        loop = spmd.body[0]
        self.assertIsInstance(loop, LoopNode)
        self.assertEqual(loop.var, "i")
        self.assertEqual(loop.lower, IntLit(0))
        self.assertEqual(loop.upper, Ident("n"))
        self.assertEqual(loop.parallel, LoopParallel("worksharing", distribute="units"))

    def test_ids_are_preorder(self):
        """测试节点编号按前序从 1 开始"""
        module = build_fixture("matmul_omp.ukl")
        ids = [node.id for node in walk(module)]
        self.assertEqual(ids, list(range(1, len(ids) + 1)))

    def test_reduction_sync(self):
        """测试 reduction 子句生成被循环引用的同步节点"""
        module = build_fixture("reduction_sum.ukl")
        spmd = next(n for n in walk(module) if isinstance(n, SpmdNode))
        self.assertEqual(spmd.targets, ["cpu"])
        loop, reduction = spmd.body
        self.assertIsInstance(reduction, SyncNode)
        self.assertEqual(reduction.name, "reduction")
        self.assertEqual(reduction.operation, "+")
        self.assertEqual(reduction.data, ["sum"])
        self.assertEqual(loop.sync, [reduction.id])
        # <= 上界加 1
        self.assertEqual(loop.upper, BinOp("+", Ident("n"), IntLit(1)))

    def test_structured_syncs(self):
        """测试 single、critical 与独立同步指令"""
        module = build_fixture("tasks.ukl")
        names = [n.name for n in walk(module) if isinstance(n, SyncNode)]
        self.assertEqual(names, ["single", "taskwait"])
        tasks = [n for n in walk(module) if isinstance(n, TaskNode)]
        self.assertEqual([t.kind for t in tasks], ["plain", "plain"])

        module = build_fixture("critical_count.ukl")
        critical = next(n for n in walk(module) if isinstance(n, SyncNode))
        self.assertEqual(critical.name, "critical")
        self.assertEqual(len(critical.body), 1)

    def test_taskloop_and_distribute(self):
        """测试 taskloop 与 teams distribute parallel for"""
        module = build_fixture("taskloop_scale.ukl")
        loop = next(n for n in walk(module) if isinstance(n, LoopNode))
        self.assertEqual(loop.parallel.kind, "taskloop")
        self.assertEqual(loop.parallel.grainsize, IntLit(3))

        module = build_fixture("matvec_omp.ukl")
        spmd = next(n for n in walk(module) if isinstance(n, SpmdNode))
        self.assertEqual(spmd.num_teams, IntLit(4))
        self.assertEqual(spmd.num_units, IntLit(64))
        loop = next(n for n in walk(module) if isinstance(n, LoopNode))
        self.assertEqual(loop.parallel.distribute, "teams,units")

    def test_openmp_and_openacc_agree(self):
        """测试四个内核的 OpenMP 与 OpenACC 版本得到相同的 UPIR"""
        for kernel in KERNEL_PAIRS:
            with self.subTest(kernel=kernel):
                omp = print_upir(build_fixture(f"{kernel}_omp.ukl"))
                acc = print_upir(build_fixture(f"{kernel}_acc.ukl"))
                self.assertEqual(omp, acc)

    def test_cuda_launch_shape(self):
        """测试 CUDA 启动映射为 offload task 内的单个 spmd"""
        module = build_fixture("axpy_cuda.ukl")
        kernel = module.function("axpy_kernel")
        self.assertTrue(kernel.is_kernel)

        host = module.function("axpy")
        task = host.body[0]
        self.assertEqual(task.kind, "offload")
        spmds = [n for n in walk(task) if isinstance(n, SpmdNode)]
        self.assertEqual(len(spmds), 1)
        self.assertIsInstance(spmds[0].body[0], CallNode)

        text = print_upir(module)
        self.assertIn("upir.task offload(nvptx:0)", text)
        self.assertIn("num_teams(((%n + %c255) / %c256)) num_units(%c256)", text)
        self.assertIn("@__unit_id()", text)

    def test_worksharing_outside_spmd(self):
        """测试 spmd 之外的 worksharing 循环"""
        source = ("void f(int n, float x[n]) {\n#pragma omp for\n"
                  "    for (int i = 0; i < n; i++) { x[i] = 0.0; }\n}\n")
        with self.assertRaises(UpirBuildError):
            build_upir(parse_kernel_source(source))

    def test_data_clauses(self):
        """测试数据子句落到对应节点上"""
        source = ("void f(int n, float x[n], float y[n]) {\n"
                  "#pragma omp target data map(to: x[0:n])\n    {\n"
                  "#pragma omp target parallel for map(tofrom: y) num_threads(8)\n"
                  "        for (int i = 0; i < n; i++) { y[i] = y[i] + x[i]; }\n    }\n}\n")
        module = build_upir(parse_kernel_source(source))
        region = module.function("f").body[0]
        self.assertIsInstance(region, DataRegionNode)
        self.assertEqual(region.data[0].symbol, "x")
        self.assertEqual(region.data[0].mapping.value, "to")
        self.assertEqual(len(region.data[0].distribution.section), 1)

        task = region.body[0]
        self.assertEqual(task.data[0].symbol, "y")
        self.assertEqual(task.data[0].mapping.value, "tofrom")


class TestPrintAndParse(unittest.TestCase):
    """UPIR 文本打印与解析测试类"""

    def test_corpus_print_is_stable(self):
        """测试语料解析后打印、再解析打印结果不变"""
        for name in sorted(os.listdir(CORPUS)):
            with self.subTest(name=name):
                module = parse_upir(read_fixture("corpus", name), file=name)
                text = print_upir(module)
                self.assertEqual(print_upir(parse_upir(text)), text)

    def test_built_modules_reparse(self):
        """测试构建出的模块打印后可以解析回来"""
        for name in ("axpy_omp.ukl", "matmul_acc.ukl", "reduction_sum.ukl", "tasks.ukl",
                     "taskloop_scale.ukl", "axpy_cuda.ukl", "serial_only.ukl"):
            with self.subTest(name=name):
                text = print_upir(build_fixture(name))
                self.assertEqual(print_upir(parse_upir(text)), text)

    def test_labels_and_extension(self):
        """测试标签按前序重新编号，扩展节点保留各类取值"""
        module = parse_upir(read_fixture("corpus", "tasks.upir"))
        ext = next(n for n in walk(module) if isinstance(n, ExtensionNode))
        target = next(n for n in walk(module) if n.id == ext.attach)
        self.assertIsInstance(target, TaskNode)
        self.assertEqual(target.policy, "help-first")
        self.assertTrue(target.is_async)

        self.assertEqual(ext.get("vendor"), "nvidia")
        self.assertIsNone(ext.get("tuned"))
        self.assertEqual(ext.get("width"), IntLit(4))
        self.assertEqual(ext.get("vars"), ["n", "a"])

        text = print_upir(module)
        self.assertIn(f"#{target.id} upir.task", text)
        self.assertIn(f"upir.ext attach(#{target.id})", text)

    def test_field_order_is_free(self):
        """测试字段顺序任意，打印时规范化"""
        text = ("upir.module {\n  upir.func @f(%n: i32) {\n"
                "    upir.spmd num_units(%c4) target(cpu) {\n    }\n  }\n}\n")
        printed = print_upir(parse_upir(text))
        self.assertIn("upir.spmd target(cpu) num_units(%c4) {", printed)

    def test_distribution_fields(self):
        """测试分布属性写成 pattern、unit-id、section 三个并列字段"""
        text = ("upir.module {\n  upir.func @f(%n: i32, %a: f64[%n]) {\n"
                "    upir.spmd target(cpu) data(%a(section([%c0:%n:%c2]), shared(explicit), "
                "unit-id(@__unit_id()), pattern(cyclic))) {\n    }\n  }\n}\n")
        module = parse_upir(text, validate=False)
        spmd = module.functions[0].body[0]
        self.assertEqual(spmd.data[0].distribution,
                         Distribution("cyclic", Intrinsic("__unit_id"),
                                      (ArraySection(IntLit(0), Ident("n"), IntLit(2)),)))
        printed = print_upir(module, validate=False)
        self.assertIn("%a(shared(explicit), pattern(cyclic), unit-id(@__unit_id()), section([%c0:%n:%c2]))",
                      printed)
        self.assertNotIn("distribution(", printed)

        # 只写 section 时分布模式取 block
        module = parse_upir(text.replace(", unit-id(@__unit_id()), pattern(cyclic)", ""), validate=False)
        self.assertEqual(module.functions[0].body[0].data[0].distribution.pattern, "block")

        bad = [
            text.replace("pattern(cyclic)", "distribution(cyclic)"),
            text.replace("pattern(cyclic)", "pattern(cyclic), pattern(block)"),
            text.replace("pattern(cyclic)", "pattern(spiral)"),
        ]
        for case in bad:
            with self.subTest(text=case):
                with self.assertRaises(UpirSyntaxError):
                    parse_upir(case, validate=False)

    def test_empty_module(self):
        """测试空模块"""
        self.assertEqual(print_upir(UpirModule()), "upir.module {\n}\n")
        self.assertEqual(parse_upir("upir.module {\n}\n").functions, [])

    def test_syntax_errors(self):
        """测试 UPIR 语法错误"""
        bad = [
            "upir.module {\n  upir.func @f() {\n    upir.spmd num_units(%c4 {\n    }\n  }\n}\n",
            "upir.module {\n  upir.func @f() {\n    upir.bogus\n  }\n}\n",
            # 未定义的标签
            "upir.module {\n  upir.func @f() {\n    upir.ext attach(#9) {\n    }\n  }\n}\n",
            # 字段取值非法
            "upir.module {\n  upir.func @f() {\n    upir.task offload(gpu0:1) {\n    }\n  }\n}\n",
        ]
        for text in bad:
            with self.subTest(text=text):
                with self.assertRaises(UpirSyntaxError) as ctx:
                    parse_upir(text, file="bad.upir")
                self.assertEqual(ctx.exception.position.file, "bad.upir")


class TestValidator(unittest.TestCase):
    """UPIR 结构校验测试类"""

    @staticmethod
    def module_with(*nodes) -> UpirModule:
        return UpirModule([UpirFunction("f", [UpirParam("n", "i32")], body=list(nodes))])

    def test_valid_module(self):
        """测试合法模块没有问题"""
        self.assertEqual(validate_upir(build_fixture("stencil_omp.ukl")), [])

    def test_worksharing_outside_spmd(self):
        """测试 spmd 之外的 worksharing 循环"""
        loop = LoopNode(id=1, var="i", lower=IntLit(0), upper=Ident("n"), step=IntLit(1),
                        parallel=LoopParallel("worksharing"))
        problems = validate_upir(self.module_with(loop))
        self.assertEqual(len(problems), 1)
        self.assertIn("spmd", problems[0])

    def test_reference_problems(self):
        """测试重复 id 与悬空引用"""
        first = SyncNode(id=1, name="barrier")
        second = SyncNode(id=1, name="barrier")
        spmd = SpmdNode(id=2, sync=[7], body=[first, second])
        problems = validate_upir(self.module_with(spmd))
        self.assertTrue(any("重复" in p for p in problems))
        self.assertTrue(any("#7" in p for p in problems))

    def test_sync_rules(self):
        """测试同步节点的字段约束"""
        nodes = [
            SyncNode(id=1, name="allreduce"),
            SyncNode(id=2, name="barrier", operation="+"),
            SyncNode(id=3, name="barrier", mode="async", step=None),
            SyncNode(id=4, name="barrier", body=[]),
        ]
        spmd = SpmdNode(id=5, body=nodes)
        self.assertEqual(len(validate_upir(self.module_with(spmd))), 4)

    def test_async_pairs(self):
        """测试 arrive-compute 与 wait-release 配对"""
        wait = SyncNode(id=1, name="barrier", mode="async", step="wait-release")
        arrive = SyncNode(id=2, name="barrier", mode="async", step="arrive-compute")
        problems = validate_upir(self.module_with(SpmdNode(id=3, body=[wait, arrive])))
        self.assertEqual(len(problems), 2)

    def test_mapping_needs_offload_scope(self):
        """测试数据映射必须位于卸载任务或数据区域内"""
        item = DataItem("n", mapping=Attribute("to"))
        spmd = SpmdNode(id=1, data=[item])
        problems = validate_upir(self.module_with(spmd))
        self.assertEqual(len(problems), 1)

        task = TaskNode(id=2, kind="offload", device="nvptx", device_id=0,
                        body=[SpmdNode(id=1, data=[DataItem("n", mapping=Attribute("to"))])])
        self.assertEqual(validate_upir(self.module_with(task)), [])

    def test_data_movement_size(self):
        """测试常量字节数必须为正"""
        for size, count in ((IntLit(-8), 1), (IntLit(0), 1), (IntLit(8), 0), (Ident("n"), 0)):
            with self.subTest(size=size):
                node = DataMovementNode(id=1, dest_ptr="n", src_ptr="n", size=size)
                self.assertEqual(len(validate_upir(self.module_with(node))), count)

    def test_branch_through_call(self):
        """测试 branch 可以指向区域内调用的函数中的 if"""
        guard = IfNode(id=1, cond=BinOp("<", Ident("k"), IntLit(2)))
        helper = UpirFunction("helper", [UpirParam("k", "i32")], body=[guard])
        spmd = SpmdNode(id=2, branch=[1], body=[CallNode(id=3, name="helper", args=[Ident("n")])])
        main = UpirFunction("f", [UpirParam("n", "i32")], body=[spmd])
        self.assertEqual(validate_upir(UpirModule([helper, main])), [])

        outside = SpmdNode(id=2, branch=[1], body=[])
        problems = validate_upir(UpirModule([helper, UpirFunction("f", [], body=[outside])]))
        self.assertEqual(len(problems), 1)

    def test_check_upir_raises(self):
        """测试校验失败时抛出异常并带上问题列表"""
        task = TaskNode(id=1, kind="plain", device="nvptx", device_id=0)
        with self.assertRaises(UpirValidationError) as ctx:
            check_upir(self.module_with(task))
        self.assertEqual(len(ctx.exception.problems), 1)


if __name__ == "__main__":
    unittest.main()
