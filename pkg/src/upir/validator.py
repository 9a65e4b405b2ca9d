"""
UPIR 结构校验
"""

import logging
from collections import Counter
from typing import Dict, List, Tuple

from ..frontend.ast_nodes import const_value
from .nodes import (
    ACCESS_MODES, DEPEND_MODES, DEVICES, DISTRIBUTE_TARGETS, DISTRIBUTION_PATTERNS,
    MAPPING_PROPERTIES, PARALLEL_KINDS, REDUCTION_OPERATIONS, SCHEDULE_POLICIES,
    SHARING_PROPERTIES, SPMD_TARGETS, SYNC_NAMES, SYNC_STEPS, SYNC_UNIT_KINDS, TASK_KINDS,
    TASK_POLICIES, VISIBILITIES, DataItem, DataMovementNode, DataRegionNode, ExtensionNode, LoopNode, Node,
    SpmdNode, SyncNode, TaskNode, UpirModule
)
from .traversal import child_regions, enclosing, references, walk, walk_through_calls, walk_with_ancestors
from ..utils.errors import UpirValidationError

logger = logging.getLogger(__name__)

_BODY_SYNCS = ("single", "critical", "atomic")


def _check_data_item(item: DataItem, node: Node, ancestors: Tuple[Node, ...], problems: List[str]) -> None:
    where = f"节点 #{node.id} 的数据项 {item.symbol}"
    if item.sharing is not None:
        if item.sharing.value not in SHARING_PROPERTIES or item.sharing.visibility not in VISIBILITIES:
            problems.append(f"{where} 的 sharing 属性非法")
    if item.mapping is not None:
        if item.mapping.value not in MAPPING_PROPERTIES or item.mapping.visibility not in VISIBILITIES:
            problems.append(f"{where} 的 mapping 属性非法")
        elif item.mapping.value != "none":
            holders = (node,) + ancestors
            if not any(_is_mapping_scope(h) for h in holders):
                problems.append(f"{where} 有数据映射 {item.mapping.value}，但不在卸载任务或数据区域内")
    if item.access is not None and item.access not in ACCESS_MODES:
        problems.append(f"{where} 的访问模式 {item.access} 非法")
    if item.distribution is not None and item.distribution.pattern not in DISTRIBUTION_PATTERNS:
        problems.append(f"{where} 的分布模式 {item.distribution.pattern} 非法")


def _is_mapping_scope(node: Node) -> bool:
    if isinstance(node, DataRegionNode):
        return True
    return isinstance(node, TaskNode) and node.kind in ("offload", "remote")


def _check_spmd(node: SpmdNode, index: Dict[int, Node], ancestors, problems: List[str],
                module: UpirModule) -> None:
    for target in node.targets:
        if target not in SPMD_TARGETS:
            problems.append(f"spmd #{node.id} 的 target {target} 非法")
    if node.nested_child is not None:
        child = index.get(node.nested_child)
        if not isinstance(child, SpmdNode):
            problems.append(f"spmd #{node.id} 的 nested-child 不是 spmd")
        else:
            if child.nested_parent != node.id:
                problems.append(f"spmd #{node.id} 与 #{child.id} 的嵌套父子关系不一致")
            if child.id not in {n.id for n in walk(node)}:
                problems.append(f"spmd #{child.id} 不在其 nested-parent #{node.id} 之内")
            if node.nested_level is not None and child.nested_level is not None \
                    and node.nested_level != child.nested_level + 1:
                problems.append(f"spmd #{node.id} 的 nested-level 应比 #{child.id} 大 1")
    if node.nested_parent is not None:
        parent = index.get(node.nested_parent)
        if not isinstance(parent, SpmdNode):
            problems.append(f"spmd #{node.id} 的 nested-parent 不是 spmd")
        elif node.id not in {n.id for n in walk(parent)}:
            problems.append(f"spmd #{node.id} 不在其 nested-parent #{parent.id} 之内")
        elif parent.nested_level is not None and node.nested_level is not None \
                and node.nested_level >= parent.nested_level:
            problems.append(f"spmd #{node.id} 的 nested-level 必须小于 #{parent.id}")
    if node.nested_level is not None and node.nested_level < 0:
        problems.append(f"spmd #{node.id} 的 nested-level 不能为负")
    # 区域内调用的函数体也算在区域内
    inside = {n.id for n in walk_through_calls(node, module)}
    for branch in node.branch:
        if branch not in inside:
            problems.append(f"spmd #{node.id} 的 branch #{branch} 不在其区域内")
    _check_sync_refs(node, index, problems)


def _check_sync_refs(node: Node, index: Dict[int, Node], problems: List[str]) -> None:
    for ref in node.sync:
        if ref in index and not isinstance(index[ref], SyncNode):
            problems.append(f"节点 #{node.id} 的 sync 引用 #{ref} 不是同步节点")


def _check_loop(node: LoopNode, index, ancestors, problems: List[str]) -> None:
    if node.collapse < 1:
        problems.append(f"loop #{node.id} 的 collapse 必须不小于 1")
    elif node.collapse > 1 and _nest_depth(node) < node.collapse:
        problems.append(f"loop #{node.id} 的 collapse({node.collapse}) 超过了完美嵌套深度")
    _check_sync_refs(node, index, problems)
    parallel = node.parallel
    if parallel is None:
        return
    if parallel.kind not in PARALLEL_KINDS:
        problems.append(f"loop #{node.id} 的并行方式 {parallel.kind} 非法")
        return
    groups = {
        "worksharing": (parallel.schedule, parallel.chunk, parallel.distribute, parallel.nowait or None),
        "simd": (parallel.simdlen,),
        "taskloop": (parallel.grainsize, parallel.num_tasks),
    }
    for kind, values in groups.items():
        if kind != parallel.kind and any(v is not None for v in values):
            problems.append(f"loop #{node.id} 是 {parallel.kind}，但带有 {kind} 的字段")
    if parallel.kind == "worksharing":
        if enclosing(ancestors, SpmdNode) is None:
            problems.append(f"worksharing 循环 #{node.id} 必须位于 spmd 区域内")
        if parallel.schedule is not None and parallel.schedule not in SCHEDULE_POLICIES:
            problems.append(f"loop #{node.id} 的调度策略 {parallel.schedule} 非法")
        if parallel.chunk is not None and parallel.schedule is None:
            problems.append(f"loop #{node.id} 有块大小但没有调度策略")
        if parallel.distribute is not None and parallel.distribute not in DISTRIBUTE_TARGETS:
            problems.append(f"loop #{node.id} 的 distribute {parallel.distribute} 非法")
    if parallel.grainsize is not None and parallel.num_tasks is not None:
        problems.append(f"loop #{node.id} 不能同时设置 grainsize 和 num_tasks")


def _nest_depth(loop: LoopNode) -> int:
    depth = 1
    body = loop.body
    while len(body) == 1 and isinstance(body[0], LoopNode) and body[0].parallel is None:
        depth += 1
        body = body[0].body
    return depth


def _check_task(node: TaskNode, index, problems: List[str]) -> None:
    if node.kind not in TASK_KINDS:
        problems.append(f"task #{node.id} 的类型 {node.kind} 非法")
    has_device = node.device is not None or node.device_id is not None
    if (node.kind in ("offload", "remote")) != has_device:
        problems.append(f"task #{node.id} 只有 offload/remote 任务才带设备")
    if node.device is not None and node.device not in DEVICES:
        problems.append(f"task #{node.id} 的设备 {node.device} 非法")
    if node.policy is not None and node.policy not in TASK_POLICIES:
        problems.append(f"task #{node.id} 的策略 {node.policy} 非法")
    for depend in node.depend:
        if depend.mode not in DEPEND_MODES:
            problems.append(f"task #{node.id} 的 depend 模式 {depend.mode} 非法")
    _check_sync_refs(node, index, problems)


def _check_sync(node: SyncNode, problems: List[str]) -> None:
    if node.name not in SYNC_NAMES:
        problems.append(f"sync #{node.id} 的名字 {node.name} 非法")
        return
    if node.name in ("reduction", "allreduce") and node.operation is None:
        problems.append(f"{node.name} #{node.id} 必须指定运算")
    if node.name in ("barrier", "taskwait") and node.operation is not None:
        problems.append(f"{node.name} #{node.id} 不能指定运算")
    if node.operation is not None and node.operation not in REDUCTION_OPERATIONS:
        problems.append(f"sync #{node.id} 的运算 {node.operation} 非法")
    if node.mode == "sync" and node.step is not None:
        problems.append(f"sync #{node.id} 是同步方式，不能带步骤")
    if node.mode == "async" and node.step not in SYNC_STEPS:
        problems.append(f"sync #{node.id} 是异步方式，必须指定 arrive-compute 或 wait-release")
    if node.mode not in ("sync", "async"):
        problems.append(f"sync #{node.id} 的方式 {node.mode} 非法")
    if node.body is not None and node.name not in _BODY_SYNCS:
        problems.append(f"{node.name} #{node.id} 不能带区域")
    for unit in (node.primary, node.secondary):
        if unit is not None and unit.kind not in SYNC_UNIT_KINDS:
            problems.append(f"sync #{node.id} 的参与方 {unit.kind} 非法")


def async_pair_key(node: SyncNode):
    return node.name, repr(node.primary), repr(node.secondary), tuple(node.data)


def _check_async_pairs(region: List[Node], problems: List[str]) -> None:
    """同一区域内 arrive-compute 必须在配对的 wait-release 之前"""
    pending: Counter = Counter()
    for node in region:
        if isinstance(node, SyncNode) and node.mode == "async":
            key = async_pair_key(node)
            if node.step == "arrive-compute":
                pending[key] += 1
            elif node.step == "wait-release":
                if pending[key] == 0:
                    problems.append(f"异步 {node.name} #{node.id} 的 wait-release 之前没有配对的 arrive-compute")
                else:
                    pending[key] -= 1
    for key, count in pending.items():
        if count:
            problems.append(f"异步 {key[0]} 的 arrive-compute 缺少配对的 wait-release")
    for node in region:
        for sub in child_regions(node):
            _check_async_pairs(sub, problems)


def validate_upir(module: UpirModule) -> List[str]:
    """
    检查模块的结构不变量

    Args:
        module: UPIR 模块

    Returns:
        问题列表，为空表示通过
    """
    problems: List[str] = []
    names = Counter(f.name for f in module.functions)
    for name, count in names.items():
        if count > 1:
            problems.append(f"函数 @{name} 重复定义")

    index: Dict[int, Node] = {}
    for node in walk(module):
        if node.id in index:
            problems.append(f"节点 id #{node.id} 重复")
        index[node.id] = node
    for node in walk(module):
        for ref in references(node):
            if ref not in index:
                problems.append(f"节点 #{node.id} 引用了不存在的节点 #{ref}")

    for node, ancestors in walk_with_ancestors(module):
        data = getattr(node, "data", None)
        if isinstance(data, list) and data and isinstance(data[0], DataItem):
            symbols = Counter(item.symbol for item in data)
            for symbol, count in symbols.items():
                if count > 1:
                    problems.append(f"节点 #{node.id} 中符号 {symbol} 有多个数据项")
            for item in data:
                _check_data_item(item, node, ancestors, problems)
        if isinstance(node, SpmdNode):
            _check_spmd(node, index, ancestors, problems, module)
        elif isinstance(node, LoopNode):
            _check_loop(node, index, ancestors, problems)
        elif isinstance(node, TaskNode):
            _check_task(node, index, problems)
        elif isinstance(node, SyncNode):
            _check_sync(node, problems)
        elif isinstance(node, DataMovementNode):
            size = const_value(node.size)
            if size is not None and size <= 0:
                problems.append(f"data_movement #{node.id} 的字节数必须为正，实际为 {size}")
        elif isinstance(node, ExtensionNode):
            keys = Counter(k for k, _ in node.entries)
            for key, count in keys.items():
                if count > 1:
                    problems.append(f"扩展 #{node.id} 的键 {key} 重复")

    for function in module.functions:
        _check_async_pairs(function.body, problems)
    return problems


def check_upir(module: UpirModule) -> None:
    """校验失败时抛出 UpirValidationError"""
    problems = validate_upir(module)
    if problems:
        logger.debug(f"UPIR 校验发现 {len(problems)} 个问题")
        raise UpirValidationError(problems)
