"""
acc 方言风格的文本导出

offload task + spmd 写成 acc.parallel，worksharing 循环写成 acc.loop 包住 scf.for，
其余语句沿用 UPIR 的叶子操作。只做文本导出，不调用任何外部工具链。
"""

import logging
from typing import List, Optional

from ..upir.nodes import (
    DataItem, DataRegionNode, DataUpdateNode, ExtensionNode, IfNode, LoopNode, Node, SpmdNode,
    SyncNode, TaskNode, UpirModule
)
from ..upir.printer import UpirPrinter, format_symbol, format_upir_expr
from ..upir.traversal import canonicalize, node_index
from .unparser import strip_analysis, unparse_to_openacc

logger = logging.getLogger(__name__)

_MAPPING_WORDS = {"to": "copyin", "from": "copyout", "tofrom": "copy", "allocate": "create"}
_LOOP_WORDS = {"units": "worker", "teams": "gang", "teams,units": "gang worker"}


def _operands(word: str, symbols: List[str]) -> Optional[str]:
    if not symbols:
        return None
    return f"{word}({', '.join(format_symbol(s) for s in symbols)})"


def _operand_text(text: str) -> str:
    """扩展项里保存的是 C 表达式原文：整数常量写成 %cN，单个名字写成 %name"""
    if text.isdigit():
        return f"%c{text}"
    if text.isidentifier():
        return format_symbol(text)
    return text


class AccDialectPrinter(UpirPrinter):
    def __init__(self, module: UpirModule):
        super().__init__(module)
        self.index = node_index(module)
        self.extensions: List = []

    def print(self) -> str:
        self.lines = []
        for function in self.module.functions:
            self.emit(0, f"// @{function.name}")
            self.region(function.body, 0)
        return "\n".join(self.lines) + "\n" if self.lines else ""

    def region(self, region, depth: int) -> None:
        pending = []
        for node in region:
            if isinstance(node, ExtensionNode):
                pending.extend(node.entries)
                continue
            if isinstance(node, SyncNode) and node.name == "reduction":
                continue
            self.extensions, pending = pending, []
            self.node(node, depth)

    def _data_terms(self, data: List[DataItem]) -> List[Optional[str]]:
        terms: List[Optional[str]] = []
        for word in ("copyin", "copyout", "copy", "create"):
            terms.append(_operands(word, [i.symbol for i in data if i.mapping is not None
                                          and _MAPPING_WORDS.get(i.mapping.value) == word]))
        for sharing in ("private", "firstprivate"):
            terms.append(_operands(sharing, [i.symbol for i in data
                                             if i.sharing is not None and i.sharing.value == sharing]))
        return terms

    def _reduction_terms(self, refs: List[int]) -> List[str]:
        terms = []
        for ref in refs:
            red = self.index.get(ref)
            if isinstance(red, SyncNode) and red.name == "reduction":
                terms.append(f"reduction({red.operation}: {', '.join(format_symbol(s) for s in red.data)})")
        return terms

    def _block(self, depth: int, words: List[Optional[str]], body) -> None:
        self.emit(depth, " ".join(w for w in words if w) + " {")
        self.region(body, depth + 1)
        self.emit(depth, "}")

    def _TaskNode(self, node: TaskNode, depth: int) -> None:
        spmd = node.body[0]
        vector = [f"vector_length({_operand_text(value)})"
                  for key, value in self.extensions if key == "vector_length"]
        words = [
            "acc.parallel",
            f"num_gangs({format_upir_expr(spmd.num_teams)})" if spmd.num_teams is not None else None,
            f"num_workers({format_upir_expr(spmd.num_units)})" if spmd.num_units is not None else None,
            *vector,
            "async" if node.is_async else None,
            *self._data_terms(node.data + spmd.data),
            *self._reduction_terms(spmd.sync),
        ]
        self._block(depth, words, spmd.body)

    def _SpmdNode(self, node: SpmdNode, depth: int) -> None:
        words = ["acc.parallel",
                 f"num_workers({format_upir_expr(node.num_units)})" if node.num_units is not None else None]
        self._block(depth, words, node.body)

    def _DataRegionNode(self, node: DataRegionNode, depth: int) -> None:
        self._block(depth, ["acc.data", *self._data_terms(node.data)], node.body)

    def _for(self, node: LoopNode, depth: int) -> None:
        header = (f"scf.for {format_symbol(node.var)} = {format_upir_expr(node.lower)} "
                  f"to {format_upir_expr(node.upper)} step {format_upir_expr(node.step)}")
        self._block(depth, [header], node.body)

    def _LoopNode(self, node: LoopNode, depth: int) -> None:
        if node.parallel is None:
            self._for(node, depth)
            return
        if node.parallel.kind == "simd":
            word = "vector"
        else:
            word = _LOOP_WORDS[node.parallel.distribute or "units"]
        words = [
            "acc.loop", word,
            f"collapse(%c{node.collapse})" if node.collapse > 1 else None,
            *self._data_terms(node.data),
            *self._reduction_terms(node.sync),
        ]
        self.emit(depth, " ".join(w for w in words if w) + " {")
        self._for(node, depth + 1)
        self.emit(depth, "}")

    def _SyncNode(self, node: SyncNode, depth: int) -> None:
        self.emit(depth, "acc.wait")

    def _DataUpdateNode(self, node: DataUpdateNode, depth: int) -> None:
        word = "device" if node.direction == "forward" else "host"
        self.emit(depth, f"acc.update {word}({', '.join(format_upir_expr(i) for i in node.items)})")

    def _IfNode(self, node: IfNode, depth: int) -> None:
        self.emit(depth, f"scf.if {format_upir_expr(node.cond)} {{")
        self.region(node.then, depth + 1)
        if node.orelse is not None:
            self.emit(depth, "} else {")
            self.region(node.orelse, depth + 1)
        self.emit(depth, "}")


def export_acc_dialect(module: UpirModule) -> str:
    """
    导出 acc 方言风格的文本

    Args:
        module: UPIR 模块，须能用 OpenACC 表达

    Returns:
        文本；空模块返回空串

    Raises:
        UnrepresentableError: 模块含有 OpenACC 无法表达的节点
    """
    unparse_to_openacc(module)
    text = AccDialectPrinter(canonicalize(strip_analysis(module))).print()
    logger.info(f"导出 acc 方言: {len(text.splitlines())} 行")
    return text
