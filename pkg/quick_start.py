#!/usr/bin/env python3
"""
SpamLab 快速启动脚本
"""

import sys
from pathlib import Path

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent / 'src'))


def main():
    """主函数"""
    print("🚀 SpamLab - 卷积/注意力图谱分析与 SPAM 混合器")
    print("=" * 50)

    if sys.version_info < (3, 8):
        print("❌ 需要Python 3.8或更高版本")
        sys.exit(1)

    print(f"✅ Python版本: {sys.version.split()[0]}")

    try:
        import click  # noqa: F401
        import numpy  # noqa: F401
        import pandas  # noqa: F401
        import scipy  # noqa: F401
        import tqdm  # noqa: F401
        import yaml  # noqa: F401
        print("✅ 所有依赖已安装")
    except ImportError as e:
        print(f"❌ 缺少依赖: {e}")
        print("请运行: pip install -r requirements.txt")
        sys.exit(1)

    from spamlab.core import ConfigManager

    output_dir = Path(ConfigManager().get('output.output_dir'))
    for sub in ('profile', 'verify', 'model', 'rla'):
        (output_dir / sub).mkdir(parents=True, exist_ok=True)
    print(f"✅ 输出目录已创建: {output_dir}")

    print("\n📖 使用说明(先执行 pip install -e . ，之后也可直接用 spamlab 命令):")
    print("1. 卷积核频率响应仿真:")
    print("   python -m spamlab profile --graph grid --kernel 3 --trials 240")
    print()
    print("2. 自注意力频率响应仿真:")
    print("   python -m spamlab profile --graph complete --trials 240")
    print()
    print("3. 运行验证套件:")
    print("   python -m spamlab verify --suite all --seed 0")
    print()
    print("4. 统计模型参数量:")
    print("   python -m spamlab model --preset s18_hybrid --action count-params")
    print()
    print("5. 特征图相对对数幅度:")
    print("   python -m spamlab rla --input features.spt --key stage3")
    print()
    print("6. 查看帮助:")
    print("   python -m spamlab --help")
    print()
    print("🎉 SpamLab 已准备就绪！")


if __name__ == '__main__':
    main()
