"""
worksharing 循环调度

迭代空间先规范化为 [0, T)，调度结果都是规范化下标上的半开区间。
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from ..utils.errors import ScheduleError

logger = logging.getLogger(__name__)

Chunk = Tuple[int, int]

_RESOLVED_TO_STATIC = ("runtime", "auto")


@dataclass(frozen=True)
class ScheduleDescriptor:
    """
    一个 worksharing 循环的调度描述

    lower/upper/step 是求值后的整数边界，policy 为 None 时按 static 处理。
    """
    policy: Optional[str]
    chunk_size: Optional[int]
    lower: int
    upper: int
    step: int
    num_units: int
    distribute_target: Optional[str] = None

    @property
    def trip_count(self) -> int:
        if self.step <= 0:
            raise ScheduleError(f"循环步长必须为正: {self.step}")
        return max(0, -(-(self.upper - self.lower) // self.step))

    @property
    def effective_policy(self) -> str:
        if self.policy is None or self.policy in _RESOLVED_TO_STATIC:
            return "static"
        return self.policy

    def iteration(self, index: int) -> int:
        """规范化下标对应的归纳变量值"""
        return self.lower + index * self.step

    def describe(self) -> str:
        chunk = f", {self.chunk_size}" if self.chunk_size is not None else ""
        target = f" distribute({self.distribute_target})" if self.distribute_target else ""
        return (f"schedule({self.policy or 'static'}{chunk}) [{self.lower}, {self.upper}) step {self.step} "
                f"units {self.num_units}{target}")


def _check(desc: ScheduleDescriptor, unit_id: int) -> None:
    if desc.num_units <= 0:
        raise ScheduleError(f"参与调度的单元数必须为正: {desc.num_units}")
    if not 0 <= unit_id < desc.num_units:
        raise ScheduleError(f"单元编号 {unit_id} 超出范围 [0, {desc.num_units})")
    if desc.chunk_size is not None and desc.chunk_size <= 0:
        raise ScheduleError(f"块大小必须为正: {desc.chunk_size}")


def static_partition(total: int, units: int, unit_id: int) -> Chunk:
    """不带块大小的 static：连续分块，余数给编号小的单元"""
    base, extra = divmod(total, units)
    start = unit_id * base + min(unit_id, extra)
    size = base + (1 if unit_id < extra else 0)
    return start, start + size


def chunk_sequence(desc: ScheduleDescriptor) -> List[Chunk]:
    """
    按分发顺序列出所有块

    static 带块大小和 dynamic 为固定大小；guided 每块 max(ceil(剩余/p), c)。
    """
    total = desc.trip_count
    policy = desc.effective_policy
    minimum = desc.chunk_size or 1
    chunks: List[Chunk] = []
    start = 0
    while start < total:
        if policy == "guided":
            size = max(math.ceil((total - start) / desc.num_units), minimum)
        else:
            size = minimum
        end = min(start + size, total)
        chunks.append((start, end))
        start = end
    return chunks


def compute_schedule(desc: ScheduleDescriptor, unit_id: int) -> List[Chunk]:
    """
    计算某个单元分到的迭代块

    Args:
        desc: 调度描述
        unit_id: 单元编号，0 <= unit_id < num_units

    Returns:
        规范化下标上的半开区间列表；所有单元的结果互不相交且恰好覆盖 [0, T)。
        dynamic / guided 按块序列轮流分发给各单元（单元同时到达分发点时的结果）。

    Raises:
        ScheduleError: 单元数非正或编号越界
    """
    _check(desc, unit_id)
    if desc.policy in _RESOLVED_TO_STATIC:
        logger.warning(f"调度策略 {desc.policy} 按 static 处理")
    total = desc.trip_count
    if desc.effective_policy == "static" and desc.chunk_size is None:
        start, end = static_partition(total, desc.num_units, unit_id)
        return [(start, end)] if end > start else []
    chunks = chunk_sequence(desc)
    return chunks[unit_id::desc.num_units]


class Dispatcher:
    """
    dynamic / guided 的确定性分发器

    多个单元同时等待时，编号最小的单元先拿到下一块。
    """

    def __init__(self, desc: ScheduleDescriptor):
        if desc.num_units <= 0:
            raise ScheduleError(f"参与调度的单元数必须为正: {desc.num_units}")
        self.desc = desc
        self.chunks = chunk_sequence(desc)
        self.position = 0
        self.waiting: List[int] = []
        self.assigned: Dict[int, List[Chunk]] = {u: [] for u in range(desc.num_units)}

    def request(self, unit_id: int) -> None:
        if unit_id not in self.waiting:
            self.waiting.append(unit_id)

    def exhausted(self) -> bool:
        return self.position >= len(self.chunks)

    def next_chunk(self, unit_id: int) -> Optional[Chunk]:
        """
        unit_id 请求下一块

        Returns:
            分到的块；还有编号更小的单元在等待时返回 None 表示需要让出；
            块已分完时返回空区间 (T, T)
        """
        self.request(unit_id)
        if self.exhausted():
            self.waiting.remove(unit_id)
            total = self.desc.trip_count
            return total, total
        if min(self.waiting) != unit_id:
            return None
        self.waiting.remove(unit_id)
        chunk = self.chunks[self.position]
        self.position += 1
        self.assigned[unit_id].append(chunk)
        return chunk
