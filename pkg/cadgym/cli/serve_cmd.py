from __future__ import annotations

"""serve：在标准输入/输出上提供工具服务。"""

import argparse
import sys
from pathlib import Path

from loguru import logger

from cadgym.cli import EXIT_OK, ConfigLoader
from cadgym.config import AppConfig
from cadgym.services.gym import CadGym, resolve_task
from cadgym.services.reward import GeometricJudge, RewardWeights
from cadgym.services.rpc_server import RpcSession, serve
from cadgym.services.trajectory_store import write_trajectories


def build_serve_command(subparsers, config_loader: ConfigLoader) -> None:
    parser = subparsers.add_parser("serve", help="通过逐行 JSON-RPC 在标准流上提供建模工具")
    parser.add_argument("--task", help="任务文件路径或任务 id；提供后会话结束时按该任务评分")
    parser.add_argument("--trajectory-out", type=Path, help="会话结束时把轨迹记录追加到该文件")
    parser.set_defaults(handler=lambda args: run_serve(args, config_loader(args)))


def run_serve(args: argparse.Namespace, config: AppConfig) -> int:
    gym = CadGym.from_config(config)
    task = resolve_task(args.task, config.paths.tasks_dir) if args.task else None

    def _persist(record) -> None:
        write_trajectories(args.trajectory_out, [record], append=True)
        logger.info("trajectory appended to {}", args.trajectory_out)

    session = RpcSession(
        gym,
        task,
        judge=GeometricJudge.from_config(config.reward),
        weights=RewardWeights.from_config(config.reward),
        on_close=_persist if args.trajectory_out else None,
    )
    logger.info("serving tools on stdio (task={})", task.id if task else "none")
    serve(sys.stdin, sys.stdout, session)
    return EXIT_OK
