"""
upirc - 分析：数据属性、访问模式、隐式同步、SPMD 嵌套与分支发散
"""

import logging
from typing import Callable, Dict, Iterable, Optional

from ..upir.nodes import UpirModule
from ..utils.errors import PassError
from .access_modes import infer_access_modes
from .data_attributes import infer_data_attributes
from .divergence import detect_divergence
from .implicit_sync import materialize_implicit_sync
from .nesting import annotate_nesting

logger = logging.getLogger(__name__)

# 固定的执行顺序
ANALYSES: Dict[str, Callable[[UpirModule], UpirModule]] = {
    "data-attributes": infer_data_attributes,
    "access-modes": infer_access_modes,
    "implicit-sync": materialize_implicit_sync,
    "nesting": annotate_nesting,
    "divergence": detect_divergence,
}


def run_analyses(module: UpirModule, names: Optional[Iterable[str]] = None) -> UpirModule:
    """
    按固定顺序执行指定的分析

    Args:
        module: UPIR 模块
        names: 分析名，None 表示全部

    Returns:
        分析后的新模块
    """
    wanted = set(ANALYSES) if names is None else set(names)
    unknown = wanted - set(ANALYSES)
    if unknown:
        raise PassError(f"未知的分析: {', '.join(sorted(unknown))}")
    for name, analysis in ANALYSES.items():
        if name in wanted:
            logger.debug(f"执行分析 {name}")
            module = analysis(module)
    return module


__all__ = [
    "ANALYSES", "run_analyses",
    "infer_access_modes", "infer_data_attributes", "detect_divergence",
    "materialize_implicit_sync", "annotate_nesting"
]
