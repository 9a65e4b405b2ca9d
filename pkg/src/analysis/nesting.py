"""
SPMD 嵌套标注
"""

import copy
import logging
from typing import List, Optional

from ..upir.nodes import SpmdNode, UpirModule
from ..upir.traversal import child_regions

logger = logging.getLogger(__name__)


def direct_spmds(region) -> List[SpmdNode]:
    """区域内不经过其他 spmd 就能到达的 spmd"""
    found: List[SpmdNode] = []
    for node in region:
        if isinstance(node, SpmdNode):
            found.append(node)
        else:
            for sub in child_regions(node):
                found.extend(direct_spmds(sub))
    return found


def _annotate(spmd: SpmdNode, parent: Optional[SpmdNode]) -> int:
    children = direct_spmds(spmd.body)
    levels = [_annotate(child, spmd) for child in children]
    spmd.nested_parent = parent.id if parent is not None else None
    if children:
        deepest = max(range(len(children)), key=lambda i: (levels[i], -i))
        spmd.nested_child = children[deepest].id
        spmd.nested_level = levels[deepest] + 1
    else:
        spmd.nested_child = None
        spmd.nested_level = 0
    return spmd.nested_level


def annotate_nesting(module: UpirModule) -> UpirModule:
    """
    标注 spmd 的嵌套层次：最内层为 0，外层比它最深的子 spmd 大 1

    有多个直接嵌套的子 spmd 时，nested-child 指向层次最深的一个（相同时取靠前的），
    每个子 spmd 的 nested-parent 都指向外层。

    Args:
        module: UPIR 模块，输入不变

    Returns:
        新模块
    """
    result = copy.deepcopy(module)
    count = 0
    for function in result.functions:
        for spmd in direct_spmds(function.body):
            _annotate(spmd, None)
            count += 1
    logger.debug(f"嵌套标注: {count} 个最外层 spmd")
    return result
