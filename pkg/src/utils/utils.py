"""
通用工具函数实现
"""

import os
from typing import Dict, Iterable, List, Optional, Union

from .errors import InputBindingError, UpircError

Number = Union[int, float]

COLOR_ENV = "UPIRC_COLOR"
_RED = "\033[31m"
_BOLD = "\033[1m"
_RESET = "\033[0m"


def color_enabled(default: bool = False) -> bool:
    """
    诊断信息是否着色

    Args:
        default: 配置文件中的默认值

    Returns:
        UPIRC_COLOR 存在时以它为准，否则取默认值
    """
    value = os.environ.get(COLOR_ENV)
    if value is None:
        return default
    return value.strip() not in ("", "0", "false", "no")


def format_diagnostic(error: UpircError, file: str, color: bool = False) -> str:
    """
    格式化诊断信息为 file:line:col: error: message

    Args:
        error: 错误对象
        file: 输入文件名，错误里没有位置时使用
        color: 是否着色

    Returns:
        一行诊断文本
    """
    position = error.position
    if position is None:
        where = f"{file}:1:1"
    else:
        name = file if position.file == "<input>" else position.file
        where = f"{name}:{max(position.line, 1)}:{max(position.column, 1)}"
    label = "error:"
    if color:
        where = f"{_BOLD}{where}{_RESET}"
        label = f"{_RED}{_BOLD}error:{_RESET}"
    return f"{where}: {label} {error.message}"


def _parse_number(token: str) -> Number:
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise InputBindingError(f"无法解析的输入值: {token}")


def parse_input_bindings(specs: Iterable[str]) -> Dict[str, List[Number]]:
    """
    解析 --input 绑定

    以逗号分隔；带 = 的片段开始一个新绑定，其余片段追加到当前绑定，
    例如 x=1,2,3,4,y=1,1,1,1,a=2,n=4。

    Args:
        specs: 一个或多个绑定字符串

    Returns:
        符号名到数值列表的映射
    """
    bindings: Dict[str, List[Number]] = {}
    for spec in specs:
        current: Optional[str] = None
        for raw in spec.replace("[", "").replace("]", "").split(","):
            token = raw.strip()
            if not token:
                continue
            if "=" in token:
                name, _, value = token.partition("=")
                name = name.strip()
                if not name.isidentifier():
                    raise InputBindingError(f"非法的绑定名: {name}")
                current = name
                bindings[current] = []
                value = value.strip()
                if value:
                    bindings[current].append(_parse_number(value))
            elif current is None:
                raise InputBindingError(f"值 {token} 之前缺少绑定名")
            else:
                bindings[current].append(_parse_number(token))
    return bindings


def read_source(file_path: str) -> str:
    """读取 UTF-8 源文件"""
    with open(file_path, "r", encoding="utf-8") as f:
        return f.read()


def write_output(text: str, file_path: str) -> None:
    """
    写出产物文件，统一使用 LF 换行

    Args:
        text: 文本内容
        file_path: 目标路径
    """
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(file_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
