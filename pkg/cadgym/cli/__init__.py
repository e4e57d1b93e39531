"""命令行子命令：serve、rollout、eval、train-sim、fmt-check。"""

from __future__ import annotations

import argparse
from typing import Callable

from cadgym.config import AppConfig

ConfigLoader = Callable[[argparse.Namespace], AppConfig]

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(RuntimeError):
    """参数组合不合法（退出码 2）。"""
