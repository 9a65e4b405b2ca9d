"""
测试前端：内核语言、指令解析与 CUDA 启动识别
"""

import os
import unittest

from src.frontend import (
    analyze_canonical_loop, parse_acc_directive, parse_directive, parse_kernel_source,
    parse_omp_directive, render_directive
)
from src.frontend.ast_nodes import (
    Annotated, Assign, BinOp, Decl, DirectiveStmt, For, Ident, Index, Intrinsic, IntLit
)
from src.utils.errors import (
    AttachError, DirectiveError, KernelSyntaxError, NonCanonicalLoopError, SemanticError
)

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def load_fixture(name: str):
    path = os.path.join(FIXTURES, name)
    with open(path, 'r', encoding='utf-8') as f:
        return parse_kernel_source(f.read(), file=path)


class TestKernelParser(unittest.TestCase):
    """内核语言解析测试类"""

    def test_parse_axpy(self):
        """测试解析 AXPY 内核"""
        program = load_fixture("axpy_omp.ukl")
        fn = program.function("axpy")
        self.assertIsNotNone(fn)
        self.assertEqual([p.name for p in fn.params], ["n", "a", "x", "y"])
        self.assertEqual(fn.params[2].dims, (None,))
        self.assertFalse(fn.params[0].is_array)
        self.assertEqual(fn.return_type, "void")

        stmt = fn.body.stmts[0]
        self.assertIsInstance(stmt, Annotated)
        self.assertEqual(stmt.directive.language, "openmp")
        self.assertEqual(stmt.directive.constructs, ("target", "parallel", "for"))
        self.assertEqual(stmt.directive.clause("num_threads").args, (IntLit(1024),))
        self.assertIsInstance(stmt.stmt, For)

    def test_directives_in_source_order(self):
        """测试按源码顺序列出指令"""
        program = load_fixture("barrier_phases.ukl")
        constructs = [d.constructs for d in program.directives()]
        self.assertEqual(constructs, [("parallel",), ("for",), ("barrier",), ("for",)])

    def test_standalone_directive(self):
        """测试独立指令成为单独的语句"""
        program = load_fixture("tasks.ukl")
        region = program.function("spawn").body.stmts[0].stmt
        single = region.stmts[0].stmt
        self.assertIsInstance(single.stmts[-1], DirectiveStmt)
        self.assertEqual(single.stmts[-1].directive.constructs, ("taskwait",))

    def test_comments_and_includes_ignored(self):
        """测试注释与 #include 被忽略"""
        source = "#include <stdio.h>\n/* block */\nvoid f(int n) { // line\n    int k = n;\n}\n"
        program = parse_kernel_source(source)
        self.assertEqual(len(program.functions), 1)
        self.assertIsInstance(program.function("f").body.stmts[0], Decl)

    def test_compound_assignment(self):
        """测试复合赋值展开"""
        program = parse_kernel_source("void f(int n, float a, float* y) {\n    y[n] += a;\n}\n")
        stmt = program.function("f").body.stmts[0]
        self.assertIsInstance(stmt, Assign)
        self.assertEqual(stmt.value, BinOp("+", Index("y", (Ident("n"),)), Ident("a")))

    def test_syntax_error_position(self):
        """测试语法错误带文件和行号"""
        with self.assertRaises(KernelSyntaxError) as ctx:
            load_fixture("bad_syntax.ukl")
        position = ctx.exception.position
        self.assertTrue(position.file.endswith("bad_syntax.ukl"))
        self.assertEqual(position.line, 2)

    def test_undeclared_identifier(self):
        """测试未声明的标识符"""
        with self.assertRaises(SemanticError) as ctx:
            parse_kernel_source("void f(int n) {\n    y = n;\n}\n", file="k.ukl")
        self.assertEqual(ctx.exception.position.file, "k.ukl")
        self.assertEqual(ctx.exception.position.line, 2)

    def test_collapse_inner_bound_uses_outer_variable(self):
        """测试 collapse 内层边界可以引用外层归纳变量"""
        program = load_fixture("triangular.ukl")
        loop = program.functions[0].body.stmts[0]
        self.assertIsInstance(loop, Annotated)
        inner = loop.stmt.body.stmts[0]
        self.assertEqual(analyze_canonical_loop(inner).bound, Ident("i"))

        with self.assertRaises(SemanticError):
            parse_kernel_source(
                "void f(int n, float a[n][n]) {\n#pragma omp parallel for collapse(2)\n"
                "    for (int i = 0; i < n; i++)\n        for (int j = 0; j < k; j++) {\n"
                "            a[i][j] = 0.0;\n        }\n}\n"
            )

    def test_type_errors(self):
        """测试类型检查"""
        with self.assertRaises(SemanticError):
            parse_kernel_source("void f(float x[4]) {\n    x[0.5] = 1.0;\n}\n")
        with self.assertRaises(SemanticError):
            parse_kernel_source("void f(float a, float b) {\n    float c = a % b;\n}\n")
        with self.assertRaises(SemanticError):
            parse_kernel_source("void f(int n) {\n    return n;\n}\n")

    def test_attach_errors(self):
        """测试指令附着错误"""
        with self.assertRaises(AttachError):
            parse_kernel_source("void f(int n) {\n#pragma omp parallel\n}\n")
        with self.assertRaises(AttachError):
            parse_kernel_source("void f(int n, int x[4]) {\n#pragma omp parallel for\n    x[0] = n;\n}\n")
        with self.assertRaises(AttachError):
            parse_kernel_source(
                "void f(int n, int x[4]) {\n#pragma omp atomic\n"
                "    for (int i = 0; i < n; i++) { x[0] = i; }\n}\n"
            )

    def test_non_canonical_loop_under_directive(self):
        """测试循环指令下的非规范循环"""
        source = ("void f(int n, int x[4]) {\n#pragma omp parallel for\n"
                  "    for (int i = 0; i < n; i++) {\n        i = i + 1;\n    }\n}\n")
        with self.assertRaises(NonCanonicalLoopError):
            parse_kernel_source(source)

        # 没有指令时不检查
        parse_kernel_source(source.replace("#pragma omp parallel for\n", ""))

    def test_collapse_deeper_than_nest(self):
        """测试 collapse 超过完美嵌套深度"""
        source = ("void f(int n, float a[n][n]) {\n#pragma omp parallel for collapse(2)\n"
                  "    for (int i = 0; i < n; i++) {\n        a[i][0] = 0.0;\n"
                  "        for (int j = 0; j < n; j++) { a[i][j] = 1.0; }\n    }\n}\n")
        with self.assertRaises(NonCanonicalLoopError):
            parse_kernel_source(source)


class TestCanonicalLoop(unittest.TestCase):
    """规范循环分析测试类"""

    @staticmethod
    def first_loop(source: str) -> For:
        program = parse_kernel_source(source)
        return program.functions[0].body.stmts[0]

    def test_increasing_loop(self):
        """测试递增循环"""
        loop = self.first_loop("void f(int n) {\n    for (int i = 1; i <= n; i++) { }\n}\n")
        canonical = analyze_canonical_loop(loop)
        self.assertEqual(canonical.var, "i")
        self.assertEqual(canonical.lower, IntLit(1))
        self.assertEqual(canonical.op, "<=")
        self.assertEqual(canonical.bound, Ident("n"))
        self.assertEqual(canonical.step_value, 1)

    def test_decreasing_loop(self):
        """测试递减循环与翻转的比较"""
        loop = self.first_loop("void f(int n) {\n    for (int i = n; 0 < i; i -= 2) { }\n}\n")
        canonical = analyze_canonical_loop(loop)
        self.assertEqual(canonical.op, ">")
        self.assertEqual(canonical.bound, IntLit(0))
        self.assertEqual(canonical.step_value, -2)

    def test_rejected_loops(self):
        """测试非规范循环"""
        sources = [
            "void f(int n) {\n    for (int i = 0; i != n; i++) { }\n}\n",
            "void f(int n) {\n    for (int i = 0; i < n; i--) { }\n}\n",
            "void f(int n) {\n    for (int i = 0; i < n; i += 0) { }\n}\n",
            "void f(int n, int m) {\n    for (int i = 0; i < n; i++) { n = m; }\n}\n",
        ]
        for source in sources:
            with self.subTest(source=source):
                with self.assertRaises(NonCanonicalLoopError):
                    analyze_canonical_loop(self.first_loop(source))


class TestDirectiveParser(unittest.TestCase):
    """指令解析测试类"""

    def test_openmp_combined(self):
        """测试 OpenMP 组合构造"""
        directive = parse_omp_directive(
            "#pragma omp target teams distribute parallel for num_teams(4) num_threads(64)"
        )
        self.assertEqual(directive.constructs, ("target", "teams", "distribute", "parallel", "for"))
        self.assertEqual(directive.clause("num_teams").args, (IntLit(4),))

    def test_openacc_loop(self):
        """测试 OpenACC 循环子句"""
        directive = parse_acc_directive("#pragma acc parallel loop gang worker num_gangs(4) num_workers(64)")
        self.assertEqual(directive.language, "openacc")
        self.assertEqual(directive.constructs, ("parallel", "loop"))
        self.assertIsNotNone(directive.clause("gang"))
        self.assertIsNotNone(directive.clause("worker"))
        self.assertIsNone(directive.clause("vector"))

    def test_clause_modifiers(self):
        """测试带修饰符的子句"""
        directive = parse_directive("#pragma omp parallel for reduction(+: sum) schedule(dynamic, 2)")
        reduction = directive.clause("reduction")
        self.assertEqual(reduction.modifier, "+")
        self.assertEqual(reduction.args, (Ident("sum"),))
        self.assertEqual(directive.clause("schedule").args, (Ident("dynamic"), IntLit(2)))

        directive = parse_directive("#pragma omp target data map(to: x[0:n])")
        mapping = directive.clause("map")
        self.assertEqual(mapping.modifier, "to")
        self.assertTrue(mapping.args[0].is_section)

    def test_wrong_language(self):
        """测试语言不符"""
        with self.assertRaises(DirectiveError):
            parse_omp_directive("#pragma acc parallel")
        with self.assertRaises(DirectiveError):
            parse_acc_directive("#pragma omp parallel")

    def test_directive_errors(self):
        """测试非法指令"""
        bad = [
            "#pragma omp frobnicate",
            "#pragma omp target teams distribute parallel",
            "#pragma omp parallel num_threads(2) num_threads(4)",
            "#pragma omp parallel for collapse(0)",
            "#pragma omp for schedule(sometimes)",
            "#pragma omp parallel reduction(sum)",
            "#pragma omp parallel private(x + 1)",
            "#pragma acc loop gang(2)",
        ]
        for text in bad:
            with self.subTest(text=text):
                with self.assertRaises(DirectiveError):
                    parse_directive(text)

    def test_unsupported_clause_kept_as_extension(self):
        """测试不支持的子句作为扩展保留"""
        directive = parse_directive("#pragma omp parallel num_threads(4) proc_bind(close)")
        clause = directive.clause("proc_bind")
        self.assertIsNotNone(clause)
        self.assertTrue(clause.extension)

    def test_render_reparses(self):
        """测试渲染后重新解析得到相同的指令"""
        texts = [
            "#pragma omp target parallel for num_threads(1024)",
            "#pragma omp parallel for reduction(+: sum) schedule(static, 4) nowait",
            "#pragma omp target data map(tofrom: a[0:n]) map(to: b)",
            "#pragma omp critical(update)",
            "#pragma acc parallel loop collapse(2) num_workers(16) copyin(x) copy(y)",
            "#pragma acc update host(y)",
        ]
        for text in texts:
            with self.subTest(text=text):
                directive = parse_directive(text)
                self.assertEqual(parse_directive(render_directive(directive)), directive)


class TestCudaLaunch(unittest.TestCase):
    """CUDA 启动识别测试类"""

    def test_launch_recognized(self):
        """测试识别三尖括号启动"""
        program = load_fixture("axpy_cuda.ukl")
        kernel = program.function("axpy_kernel")
        self.assertTrue(kernel.is_kernel)

        host = program.function("axpy")
        launch = host.body.stmts[0]
        self.assertIsInstance(launch, Annotated)
        self.assertEqual(launch.directive.language, "cuda-launch")
        grid, block = launch.directive.launch_config
        self.assertEqual(grid, BinOp("/", BinOp("+", Ident("n"), IntLit(255)), IntLit(256)))
        self.assertEqual(block, IntLit(256))

    def test_builtins_rewritten(self):
        """测试内核中的 CUDA 内建变量改写为单元编号"""
        program = load_fixture("axpy_cuda.ukl")
        decl = program.function("axpy_kernel").body.stmts[0]
        expected = BinOp("+", BinOp("*", Intrinsic("__team_id"), Intrinsic("__units_per_team")),
                         Intrinsic("__unit_id"))
        self.assertEqual(decl.init, expected)

    def test_launch_errors(self):
        """测试非法启动"""
        with self.assertRaises(SemanticError):
            parse_kernel_source("void k(int n) { }\nvoid h(int n) {\n    k<<<1, 32>>>(n);\n}\n")
        with self.assertRaises(SemanticError):
            parse_kernel_source("__global__ void k(int n) { }\nvoid h(int n) {\n    k<<<1, 32>>>(n, n);\n}\n")
        with self.assertRaises(SemanticError):
            parse_kernel_source("void h(int n) {\n    int i = threadIdx.x;\n}\n")


if __name__ == "__main__":
    unittest.main()
