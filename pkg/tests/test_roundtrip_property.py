"""
测试 UPIR 文本往返：随机生成合法模块，打印、解析、再打印结果不变
"""

import random
import unittest
from typing import List

from src.frontend.ast_nodes import (
    ARITH_OPS, COMPARE_OPS, ArraySection, BinOp, FloatLit, Ident, Index, Intrinsic, IntLit, Neg
)
from src.upir import canonicalize, parse_upir, print_upir, validate_upir
from src.upir.nodes import (
    ACCESS_MODES, ALLOCATORS, DEALLOCATORS, DISTRIBUTION_PATTERNS, REDUCTION_OPERATIONS,
    SCHEDULE_POLICIES, SHARING_PROPERTIES, SPMD_TARGETS, TASK_POLICIES, VISIBILITIES,
    AssignNode, Attribute, CallNode, DataItem, DataMovementNode, DataRegionNode, DataUpdateNode,
    DeclNode, Depend, Distribution, ExtensionNode, IfNode, LoopNode, LoopParallel, MmAllocNode,
    MmDeallocNode, Node, ReturnNode, SpmdNode, SyncNode, SyncUnit, TaskNode, UpirFunction,
    UpirModule, UpirParam
)

SEEDS = range(500)
MAX_DEPTH = 3
SYMBOLS = ("n", "a", "b")


class ModuleGenerator:
    """按种子生成通过结构校验的随机模块"""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.last_id = 0
        self.ids: List[int] = []

    def new(self, cls, **fields) -> Node:
        self.last_id += 1
        self.ids.append(self.last_id)
        return cls(id=self.last_id, **fields)

    # ---- 表达式 ----

    def expr(self, depth: int = 0):
        roll = self.rng.random()
        if depth >= 2 or roll < 0.3:
            return IntLit(self.rng.randint(-4, 16))
        if roll < 0.45:
            return Ident("n")
        if roll < 0.55:
            return Index("b", (IntLit(self.rng.randint(0, 7)),))
        if roll < 0.62:
            return FloatLit(self.rng.randint(0, 12) / 4)
        if roll < 0.68:
            return Intrinsic(self.rng.choice(("__unit_id", "__team_id")))
        if roll < 0.72:
            return Neg(Ident("n"))
        return BinOp(self.rng.choice(ARITH_OPS), self.expr(depth + 1), self.expr(depth + 1))

    def cond(self):
        return BinOp(self.rng.choice(COMPARE_OPS), self.expr(1), self.expr(1))

    def section(self):
        lower = IntLit(0) if self.rng.random() < 0.7 else None
        stride = IntLit(2) if self.rng.random() < 0.2 else None
        return ArraySection(lower, Ident("n"), stride)

    # ---- 数据项 ----

    def data(self, mappable: bool) -> List[DataItem]:
        items = []
        for symbol in self.rng.sample(SYMBOLS, self.rng.randint(0, 2)):
            item = DataItem(symbol)
            item.sharing = Attribute(self.rng.choice(SHARING_PROPERTIES), self.rng.choice(VISIBILITIES))
            if mappable and self.rng.random() < 0.7:
                mapper = "mapper_fn" if self.rng.random() < 0.2 else None
                value = self.rng.choice(("to", "from", "tofrom", "allocate", "none"))
                item.mapping = Attribute(value, self.rng.choice(VISIBILITIES), mapper)
            if self.rng.random() < 0.5:
                item.access = self.rng.choice(ACCESS_MODES)
            if self.rng.random() < 0.4:
                unit_id = Intrinsic("__unit_id") if self.rng.random() < 0.5 else None
                section = (self.section(),) if self.rng.random() < 0.5 else ()
                item.distribution = Distribution(self.rng.choice(DISTRIBUTION_PATTERNS), unit_id, section)
            if self.rng.random() < 0.3:
                item.allocator = self.rng.choice(ALLOCATORS + ("my_alloc",))
                item.deallocator = self.rng.choice(DEALLOCATORS)
            if self.rng.random() < 0.1:
                item.memcpy = "copy_fn"
            items.append(item)
        return items

    def depend(self) -> List[Depend]:
        return [Depend(self.rng.choice(("in", "out", "inout")),
                       self.rng.choice((Ident("n"), Index("a", (IntLit(0),)))))
                for _ in range(self.rng.randint(0, 2))]

    # ---- 节点 ----

    def region(self, depth: int, in_spmd: bool, mappable: bool, minimum: int = 0) -> List[Node]:
        nodes: List[Node] = []
        for _ in range(self.rng.randint(minimum, 3 if depth < MAX_DEPTH else 1)):
            nodes.extend(self.statement(depth, in_spmd, mappable))
        return nodes

    def statement(self, depth: int, in_spmd: bool, mappable: bool) -> List[Node]:
        leaf = depth >= MAX_DEPTH
        kinds = ["decl", "assign", "call", "sync", "movement", "alloc", "ext"]
        if not leaf:
            kinds += ["if", "loop", "simd", "taskloop", "task", "block_sync"]
            if not in_spmd:
                kinds.append("spmd")
            else:
                kinds += ["worksharing", "worksharing"]
            if not mappable:
                kinds += ["offload", "data"]
        kind = self.rng.choice(kinds)
        return getattr(self, f"_{kind}")(depth + 1, in_spmd, mappable)

    def _decl(self, depth, in_spmd, mappable):
        init = self.expr() if self.rng.random() < 0.7 else None
        node = self.new(DeclNode, name=f"t{self.last_id + 1}",
                        type=self.rng.choice(("i32", "f32", "f64")), init=init)
        return [node]

    def _assign(self, depth, in_spmd, mappable):
        target = self.rng.choice((Index("a", (self.expr(1),)), Ident("n"),
                                  Index("b", (IntLit(self.rng.randint(0, 7)),))))
        return [self.new(AssignNode, target=target, value=self.expr())]

    def _call(self, depth, in_spmd, mappable):
        args = [self.expr(1) for _ in range(self.rng.randint(0, 3))]
        return [self.new(CallNode, name="helper", args=args)]

    def _if(self, depth, in_spmd, mappable):
        node = self.new(IfNode, cond=self.cond())
        node.then = self.region(depth, in_spmd, mappable)
        if self.rng.random() < 0.5:
            node.orelse = self.region(depth, in_spmd, mappable)
        return [node]

    def _plain_loop(self, parallel=None) -> LoopNode:
        node = self.new(LoopNode, var=f"i{self.last_id + 1}", lower=IntLit(self.rng.randint(0, 3)),
                        upper=self.rng.choice((Ident("n"), self.expr(1))),
                        step=IntLit(self.rng.randint(1, 3)), parallel=parallel)
        return node

    def _loop(self, depth, in_spmd, mappable):
        node = self._plain_loop()
        node.data = self.data(mappable)
        node.body = self.region(depth, in_spmd, mappable)
        return [node]

    def _simd(self, depth, in_spmd, mappable):
        simdlen = IntLit(self.rng.choice((2, 4, 8))) if self.rng.random() < 0.5 else None
        node = self._plain_loop(LoopParallel("simd", simdlen=simdlen))
        node.body = self.region(depth, in_spmd, mappable)
        return [node]

    def _taskloop(self, depth, in_spmd, mappable):
        parallel = LoopParallel("taskloop")
        roll = self.rng.random()
        if roll < 0.4:
            parallel.grainsize = IntLit(self.rng.randint(1, 4))
        elif roll < 0.8:
            parallel.num_tasks = IntLit(self.rng.randint(1, 4))
        node = self._plain_loop(parallel)
        node.body = self.region(depth, in_spmd, mappable)
        return [node]

    def _worksharing(self, depth, in_spmd, mappable):
        parallel = LoopParallel("worksharing")
        if self.rng.random() < 0.6:
            parallel.schedule = self.rng.choice(SCHEDULE_POLICIES)
            if self.rng.random() < 0.5:
                parallel.chunk = IntLit(self.rng.randint(1, 4))
        if self.rng.random() < 0.5:
            parallel.distribute = self.rng.choice(("teams", "units", "teams,units"))
        parallel.nowait = self.rng.random() < 0.3
        node = self._plain_loop(parallel)
        node.data = self.data(mappable)
        node.body = self.region(depth, in_spmd, mappable)
        if self.rng.random() < 0.4:
            reduction = self.new(SyncNode, name="reduction",
                                 operation=self.rng.choice(REDUCTION_OPERATIONS), data=["n"])
            node.sync = [reduction.id]
            return [node, reduction]
        return [node]

    def _spmd(self, depth, in_spmd, mappable):
        node = self.new(SpmdNode)
        node.targets = sorted(self.rng.sample(SPMD_TARGETS, self.rng.randint(0, 2)),
                              key=SPMD_TARGETS.index)
        if self.rng.random() < 0.5:
            node.num_teams = IntLit(self.rng.randint(1, 4))
        if self.rng.random() < 0.8:
            node.num_units = self.rng.choice((IntLit(self.rng.randint(1, 16)), Ident("n")))
        node.data = self.data(mappable)
        node.body = self.region(depth, True, mappable)
        return [node]

    def _task(self, depth, in_spmd, mappable):
        node = self.new(TaskNode, kind="plain", depend=self.depend())
        node.data = self.data(mappable)
        node.policy = self.rng.choice((None,) + TASK_POLICIES)
        node.is_async = self.rng.random() < 0.3
        node.body = self.region(depth, in_spmd, mappable)
        return [node]

    def _offload(self, depth, in_spmd, mappable):
        kind = self.rng.choice(("offload", "offload", "remote"))
        device = self.rng.choice(("nvptx", "amd", "fpga")) if kind == "offload" else "host"
        node = self.new(TaskNode, kind=kind, device=device, device_id=self.rng.randint(0, 3),
                        depend=self.depend())
        node.data = self.data(True)
        node.is_async = self.rng.random() < 0.3
        node.body = self.region(depth, in_spmd, True)
        return [node]

    def _data(self, depth, in_spmd, mappable):
        node = self.new(DataRegionNode)
        node.data = self.data(True)
        node.body = self.region(depth, in_spmd, True)
        return [node]

    def _sync(self, depth, in_spmd, mappable):
        roll = self.rng.random()
        if roll < 0.25:
            return [self.new(SyncNode, name=self.rng.choice(("barrier", "taskwait")),
                             implicit=self.rng.random() < 0.3)]
        if roll < 0.45:
            return [self.new(SyncNode, name="allreduce", operation=self.rng.choice(REDUCTION_OPERATIONS),
                             data=["n"])]
        if roll < 0.6:
            return [self.new(SyncNode, name="broadcast", primary=SyncUnit("thread", IntLit(0)),
                             data=["n"])]
        if roll < 0.75:
            name = self.rng.choice(("send", "recv"))
            return [self.new(SyncNode, name=name, primary=SyncUnit("rank", IntLit(0)),
                             secondary=SyncUnit(self.rng.choice(("rank", "task")), None), data=["n"])]
        operation = self.rng.choice((None, "max"))
        name = "barrier" if operation is None else "allreduce"
        data = [] if operation is None else ["n"]
        arrive = self.new(SyncNode, name=name, mode="async", step="arrive-compute",
                          operation=operation, data=list(data))
        wait = self.new(SyncNode, name=name, mode="async", step="wait-release",
                        operation=operation, data=list(data))
        return [arrive, wait]

    def _block_sync(self, depth, in_spmd, mappable):
        name = self.rng.choice(("single", "critical", "atomic"))
        node = self.new(SyncNode, name=name)
        if name == "critical" and self.rng.random() < 0.5:
            node.lock = "lk"
        if name == "atomic":
            node.body = self._assign(depth, in_spmd, mappable)
        else:
            node.body = self.region(depth, in_spmd, mappable)
        return [node]

    def _movement(self, depth, in_spmd, mappable):
        if self.rng.random() < 0.5:
            space = self.rng.choice(("host", "nvptx:0"))
            node = self.new(DataMovementNode, dest_target=space, dest_ptr="a", src_target="host",
                            src_ptr="b", size=self.rng.choice((IntLit(32), BinOp("*", Ident("n"), IntLit(8)))),
                            direction=self.rng.choice(("forward", "backward")))
            node.depend = self.depend()
        else:
            items = [self.rng.choice((Ident("a"), Index("a", (self.section(),))))]
            node = self.new(DataUpdateNode, items=items, direction=self.rng.choice(("forward", "backward")),
                            device=self.rng.choice(("nvptx:0", "amd:1", "host")))
        if self.rng.random() < 0.2:
            node.memcpy = "copy_fn"
        return [node]

    def _alloc(self, depth, in_spmd, mappable):
        symbol = f"m{self.last_id + 1}"
        alloc = self.new(MmAllocNode, allocator=self.rng.choice(ALLOCATORS + ("my_alloc",)),
                         symbol=symbol, element_type=self.rng.choice(("i32", "f64")),
                         count=IntLit(self.rng.randint(1, 8)))
        dealloc = self.new(MmDeallocNode, deallocator=self.rng.choice(DEALLOCATORS), symbol=symbol)
        return [alloc, dealloc]

    def _ext(self, depth, in_spmd, mappable):
        attach = self.rng.choice(self.ids) if self.ids and self.rng.random() < 0.7 else None
        entries = []
        for key in self.rng.sample(("vendor", "hint", "width", "vars", "tuned"), self.rng.randint(0, 3)):
            value = self.rng.choice((None, 'say "hi" \\ there', IntLit(4), ["n", "a"]))
            entries.append((key, value))
        return [self.new(ExtensionNode, attach=attach, entries=entries)]

    # ---- 顶层 ----

    def function(self, index: int) -> UpirFunction:
        params = [UpirParam("n", "i32"), UpirParam("a", "f64", (Ident("n"),)),
                  UpirParam("b", "i32", (IntLit(8),))]
        function = UpirFunction(f"f{index}", params, is_kernel=self.rng.random() < 0.2)
        function.body = self.region(0, False, False, minimum=1)
        if self.rng.random() < 0.3:
            function.return_type = "i32"
            function.body.append(self.new(ReturnNode, value=self.expr()))
        return function

    def module(self) -> UpirModule:
        return UpirModule([self.function(i) for i in range(self.rng.randint(1, 3))])


class TestRoundTripProperty(unittest.TestCase):
    """UPIR 往返性质测试类"""

    def test_generated_modules_are_valid(self):
        """测试生成器只产生合法模块"""
        for seed in range(50):
            with self.subTest(seed=seed):
                self.assertEqual(validate_upir(ModuleGenerator(seed).module()), [])

    def test_print_parse_print_is_stable(self):
        """测试打印、解析、再打印得到相同文本"""
        for seed in SEEDS:
            with self.subTest(seed=seed):
                text = print_upir(ModuleGenerator(seed).module())
                self.assertEqual(print_upir(parse_upir(text, file=f"seed{seed}.upir")), text)

    def test_parse_of_print_equals_canonical(self):
        """测试打印再解析得到的模块与规范化后的原模块结构相同"""
        for seed in SEEDS:
            with self.subTest(seed=seed):
                module = ModuleGenerator(seed).module()
                self.assertEqual(parse_upir(print_upir(module)), canonicalize(module))

    def test_parse_is_idempotent_on_structure(self):
        """测试解析后的模块再打印一次仍然相同"""
        for seed in range(0, 500, 25):
            with self.subTest(seed=seed):
                module = parse_upir(print_upir(ModuleGenerator(seed).module()))
                self.assertEqual(parse_upir(print_upir(module)), module)


if __name__ == "__main__":
    unittest.main()
