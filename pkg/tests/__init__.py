"""
测试初始化文件
"""