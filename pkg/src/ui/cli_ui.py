"""
命令行用户界面实现
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, TextIO

from ..config import ConfigManager, UpircSettings
from ..frontend import parse_kernel_source
from ..interpreter import PARALLEL, SERIAL, buffer_mismatches, format_schedules, interpret, trace_schedule
from ..passes import (
    build_pipeline, export_acc_dialect, format_runtime, lower_to_runtime, unparse_to_openacc,
    unparse_to_openmp
)
from ..upir import build_upir, parse_upir, print_upir
from ..upir.nodes import UpirModule
from ..utils import color_enabled, format_diagnostic, parse_input_bindings, read_source, setup_logger, write_output
from ..utils.errors import InterpreterError, RoundTripError, UnrepresentableError, UpircError

logger = logging.getLogger(__name__)

EMIT_KINDS = ("upir", "openmp", "openacc", "accdialect", "runtime")
KERNEL_SUFFIX = ".ukl"

# -o 指向目录时按产物类型取扩展名
_EMIT_SUFFIXES = {"openmp": ".omp.ukl", "openacc": ".acc.ukl", "accdialect": ".acc.mlir"}


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要正整数: {text}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"需要正整数: {text}")
    return value


class CLIUI:
    """
    命令行用户界面

    流程：解析输入（.ukl 内核源码或 .upir 文本）-> 构建 UPIR -> 按 --passes 执行分析与变换
    -> 输出产物或解释执行。stdout 只写产物，诊断与日志都走 stderr。
    """

    def __init__(self, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None):
        self.stdout = stdout or sys.stdout
        self.stderr = stderr or sys.stderr
        self.settings = UpircSettings()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="upirc",
            description="UPIR 编译器：OpenMP/OpenACC/CUDA 内核到统一并行中间表示"
        )
        parser.add_argument("source", help="输入文件（.ukl 或 .upir）")
        parser.add_argument("--emit", choices=EMIT_KINDS, help="输出产物类型，缺省为 upir（--run 时不输出）")
        parser.add_argument("--passes", help="逗号分隔的 pass 名，缺省取配置文件；空串表示不执行任何 pass")
        parser.add_argument("--run", action="store_true", help="解释执行入口函数并打印参数的最终值")
        parser.add_argument("--serial", action="store_true", help="用串行参照模式执行")
        parser.add_argument("--compare-serial", action="store_true",
                            help="--run 时另用串行参照模式执行一次并比较参数的最终值")
        parser.add_argument("--units", type=_positive_int, help="覆盖每个 SPMD 区域的单元数")
        parser.add_argument("--teams", type=_positive_int, help="覆盖每个 SPMD 区域的组数")
        parser.add_argument("--input", dest="bindings", action="append", default=[],
                            help="输入绑定，如 x=1,2,3,4,y=1,1,1,1,a=2,n=4；可重复")
        parser.add_argument("--trace-schedule", action="store_true", help="打印 worksharing 循环的分块")
        parser.add_argument("--verify-roundtrip", action="store_true", help="检查打印/解析与反向生成的往返")
        parser.add_argument("--entry", help="入口函数名，缺省为最后一个非 kernel 函数")
        parser.add_argument("-o", "--output", help="输出文件或目录")
        parser.add_argument("--config", "-c", default="config.yaml", help="配置文件路径")
        parser.add_argument("--log-level", "-l", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日志级别")
        parser.add_argument("--log-file", help="日志文件路径")
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        运行命令行界面

        Args:
            argv: 参数列表，None 时取 sys.argv[1:]

        Returns:
            退出码：0 成功，1 输入或处理错误，2 用法错误
        """
        parser = self.build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return e.code if isinstance(e.code, int) else 2

        setup_logger(log_level=args.log_level or "WARNING", log_file=args.log_file)
        color = color_enabled()
        try:
            self.settings = ConfigManager(args.config).settings
            if args.log_level is None and (self.settings.logging.level != "WARNING" or self.settings.logging.file):
                setup_logger(log_level=self.settings.logging.level,
                             log_file=args.log_file or self.settings.logging.file)
            color = color_enabled(self.settings.diagnostics.color)
            self.execute(args)
        except UpircError as e:
            self.stderr.write(format_diagnostic(e, args.source, color) + "\n")
            return 1
        except Exception:
            logger.exception(f"处理 {args.source} 时发生内部错误")
            return 1
        return 0

    # ---- 流程 ----

    def execute(self, args: argparse.Namespace) -> None:
        module = self.load(args.source)
        names = self.pass_names(args.passes)
        module = build_pipeline(names).run(module)

        if args.verify_roundtrip:
            self.verify_roundtrip(module)

        emit = args.emit
        if emit is None and not (args.run or args.trace_schedule or args.verify_roundtrip):
            emit = "upir"

        outputs: List[str] = []
        if emit is not None:
            outputs.append(self.emit(module, emit))

        inputs = parse_input_bindings(args.bindings)
        if args.run:
            outputs.append(self.run_module(module, args, inputs, replay=(emit == "runtime")))
        if args.trace_schedule:
            units = args.units or self.settings.interpreter.default_units
            schedules = trace_schedule(module, units, args.teams, inputs, args.entry)
            outputs.append(format_schedules(schedules))

        self.write("".join(outputs), args, emit)

    def load(self, path: str) -> UpirModule:
        """按扩展名读取内核源码或 UPIR 文本"""
        try:
            text = read_source(path)
        except OSError as e:
            raise UpircError(f"无法读取输入文件: {e.strerror or e}")
        suffix = Path(path).suffix
        if suffix == KERNEL_SUFFIX:
            module = build_upir(parse_kernel_source(text, file=path))
        elif suffix == self.settings.output.upir_suffix:
            module = parse_upir(text, file=path)
        else:
            raise UpircError(f"无法识别的输入类型 {suffix or '(无扩展名)'}，应为 {KERNEL_SUFFIX} 或 "
                             f"{self.settings.output.upir_suffix}")
        logger.info(f"已读取 {path}: {len(module.functions)} 个函数")
        return module

    def pass_names(self, spec: Optional[str]) -> List[str]:
        if spec is None:
            pipeline = self.settings.pipeline
            return list(pipeline.analyses) + list(pipeline.transforms)
        return [name.strip() for name in spec.split(",") if name.strip()]

    def emit(self, module: UpirModule, kind: str) -> str:
        if kind == "upir":
            return print_upir(module)
        if kind == "openmp":
            return unparse_to_openmp(module)
        if kind == "openacc":
            return unparse_to_openacc(module)
        if kind == "accdialect":
            return export_acc_dialect(module)
        return format_runtime(lower_to_runtime(module))

    def run_module(self, module: UpirModule, args: argparse.Namespace, inputs: Dict[str, list],
                   replay: bool = False) -> str:
        interpreter = self.settings.interpreter
        target = lower_to_runtime(module) if replay else module
        options = dict(
            units=args.units, teams=args.teams, entry=args.entry,
            max_steps=interpreter.max_steps,
            default_units=interpreter.default_units,
            default_teams=interpreter.default_teams
        )
        result = interpret(target, inputs, mode=SERIAL if args.serial else PARALLEL, **options)
        logger.info(f"执行完成: {len(result.trace)} 条事件")

        if args.compare_serial and not args.serial:
            oracle = interpret(module, inputs, mode=SERIAL, **options)
            mismatches = buffer_mismatches(oracle.buffers, result.buffers, interpreter.float_tolerance)
            if mismatches:
                raise InterpreterError(f"并行结果与串行参照不一致: {', '.join(mismatches)}")
            logger.info("并行结果与串行参照一致")
        return result.format_buffers()

    def verify_roundtrip(self, module: UpirModule) -> None:
        """
        检查往返不变式

        UPIR 打印后重新解析再打印必须逐字节一致；能用 OpenMP / OpenACC 表达的模块，
        反向生成的源码重新构建后必须与原模块一致。无法表达的模型跳过。

        Raises:
            RoundTripError: 任一往返不成立
        """
        text = print_upir(module)
        if print_upir(parse_upir(text, file="<roundtrip>")) != text:
            raise RoundTripError("UPIR 打印后重新解析的结果与原文不一致")
        for name, unparse in (("OpenMP", unparse_to_openmp), ("OpenACC", unparse_to_openacc)):
            try:
                unparse(module)
            except UnrepresentableError as e:
                logger.info(f"跳过 {name} 往返检查: {e.message}")
        logger.info("往返检查通过")

    def write(self, text: str, args: argparse.Namespace, emit: Optional[str]) -> None:
        if not args.output:
            self.stdout.write(text)
            return
        target = args.output
        if os.path.isdir(target):
            output = self.settings.output
            suffixes = dict(_EMIT_SUFFIXES, upir=output.upir_suffix, runtime=output.runtime_suffix)
            target = os.path.join(target, Path(args.source).stem + suffixes.get(emit or "", ".txt"))
        write_output(text, target)
        logger.info(f"已写出 {target}")


def run_cli(argv: Optional[List[str]] = None) -> int:
    """命令行入口，返回退出码"""
    return CLIUI().run(argv)
