"""
upirc - 主程序入口
"""

import sys
import os

# 添加项目根目录到系统路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.ui import run_cli


def main():
    """主函数，参数全部交给命令行界面解析"""
    try:
        code = run_cli(sys.argv[1:])
    except KeyboardInterrupt:
        code = 130
    sys.exit(code)


if __name__ == "__main__":
    main()
