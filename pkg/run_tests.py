"""运行 upirc 测试的脚本

用法：
    python run_tests.py              # tests/ 下全部 test_*.py
    python run_tests.py schedule cli # 只跑 test_schedule.py 和 test_cli.py
"""
import unittest
import sys
import os

# 添加项目根目录到Python路径，确保能正确导入模块
ROOT = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, ROOT)


def build_suite(names):
    loader = unittest.TestLoader()
    start = os.path.join(ROOT, 'tests')
    if not names:
        return loader.discover(start, pattern='test_*.py', top_level_dir=ROOT)
    suite = unittest.TestSuite()
    for name in names:
        suite.addTests(loader.discover(start, pattern=f'test_{name}.py', top_level_dir=ROOT))
    return suite


if __name__ == '__main__':
    result = unittest.TextTestRunner(verbosity=2).run(build_suite(sys.argv[1:]))

    # 根据测试结果设置退出码
    sys.exit(not result.wasSuccessful())
