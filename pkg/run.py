#!/usr/bin/env python3
"""启动脚本"""
import sys

from ermlimits.main import main

if __name__ == "__main__":
    sys.exit(main())
