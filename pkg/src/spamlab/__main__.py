#!/usr/bin/env python3
"""
SpamLab 主入口点
"""

from .cli import main

if __name__ == '__main__':
    main()
