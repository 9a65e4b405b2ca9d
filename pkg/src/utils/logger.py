"""
日志工具实现
"""

import logging
import os
import sys
from typing import Optional

# 项目内模块均以 src. 开头，统一挂到 upirc 的处理器上
PACKAGE_LOGGERS = ("src",)


def setup_logger(
    name: str = "upirc",
    log_level: str = "WARNING",
    log_file: Optional[str] = None,
    console_output: bool = True
) -> logging.Logger:
    """
    设置日志记录器

    日志只写到 stderr 和可选的文件，stdout 留给编译产物。

    Args:
        name: 日志记录器名称
        log_level: 日志级别 (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: 日志文件路径，如果为None则不写入文件
        console_output: 是否输出到控制台

    Returns:
        配置好的日志记录器
    """
    level = getattr(logging, log_level.upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"不支持的日志级别: {log_level}")

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 重复调用时先清掉旧处理器
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    handlers = []
    if console_output:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        handlers.append(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        handlers.append(file_handler)

    for handler in handlers:
        logger.addHandler(handler)

    # 让各模块的 logging.getLogger(__name__) 共用同一组处理器
    for package in PACKAGE_LOGGERS:
        package_logger = logging.getLogger(package)
        package_logger.setLevel(level)
        for handler in list(package_logger.handlers):
            package_logger.removeHandler(handler)
        for handler in handlers:
            package_logger.addHandler(handler)
        package_logger.propagate = False

    return logger
