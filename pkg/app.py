"""命令行入口。

提供五个子命令：serve、rollout、eval、train-sim、fmt-check。
"""

from __future__ import annotations

import argparse
import sys

from loguru import logger

from cadgym.cli import EXIT_FAILURE, EXIT_USAGE, UsageError
from cadgym.cli.eval_cmd import build_eval_command
from cadgym.cli.fmt_check_cmd import build_fmt_check_command
from cadgym.cli.rollout_cmd import build_rollout_command
from cadgym.cli.serve_cmd import build_serve_command
from cadgym.cli.train_sim_cmd import build_train_sim_command
from cadgym.config import AppConfig, ConfigError


def configure_logging(level: str = "INFO") -> None:
    # stdout 留给 JSON-RPC 与报告
    logger.remove()
    logger.add(sys.stderr, level=level)


def load_config(args: argparse.Namespace) -> AppConfig:
    """配置文件 → 环境变量（路径）→ 命令行参数，后者优先。"""
    config = AppConfig.from_env(args.config).override(
        seed=args.seed,
        log_level=args.log_level,
        paths={"tasks_dir": args.tasks_dir, "output_dir": args.output_dir},
    )
    configure_logging(config.log_level)
    return config


def build_app() -> argparse.ArgumentParser:
    """构建命令行解析器并返回。"""
    parser = argparse.ArgumentParser(prog="cadgym", description="CAD 建模工具调用训练环境")
    parser.add_argument("--config", help="JSON 配置文件（默认 configs/default.json）")
    parser.add_argument("--seed", type=int, help="覆盖配置中的随机种子")
    parser.add_argument("--log-level", choices=("TRACE", "DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--tasks-dir", help="任务目录")
    parser.add_argument("--output-dir", help="输出目录")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for build in (
        build_serve_command,
        build_rollout_command,
        build_eval_command,
        build_train_sim_command,
        build_fmt_check_command,
    ):
        build(subparsers, load_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    parser = build_app()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        return args.handler(args)
    except (ConfigError, UsageError) as e:
        logger.error("{}", e)
        return EXIT_USAGE
    except (RuntimeError, ValueError, OSError) as e:
        logger.error("{}: {}", type(e).__name__, e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
