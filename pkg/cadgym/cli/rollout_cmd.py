from __future__ import annotations

"""rollout：用脚本策略或回放策略跑 episode，写轨迹文件并打印奖励汇总。"""

import argparse
from pathlib import Path

from loguru import logger
from tabulate import tabulate

from cadgym.cli import EXIT_FAILURE, EXIT_OK, ConfigLoader, UsageError
from cadgym.config import AppConfig
from cadgym.services.gym import CadGym, TrajectoryRecord, load_tasks, resolve_task, run_episode
from cadgym.services.reward import GeometricJudge, RewardWeights
from cadgym.services.scripted_policy import (
    CORRUPTION_KINDS,
    CorruptionSpec,
    ReplayPolicy,
    ScriptedPolicy,
)
from cadgym.services.trajectory_store import load_trajectories, write_trajectories


def _kinds(value: str) -> tuple[str, ...]:
    kinds = tuple(k.strip() for k in value.split(",") if k.strip())
    unknown = [k for k in kinds if k not in CORRUPTION_KINDS]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"未知的错误类型 {unknown}，可选：{', '.join(CORRUPTION_KINDS)}"
        )
    return kinds


def build_rollout_command(subparsers, config_loader: ConfigLoader) -> None:
    parser = subparsers.add_parser("rollout", help="运行 episode 并保存轨迹")
    target = parser.add_mutually_exclusive_group(required=True)
    target.add_argument("--task", help="任务文件路径或任务 id")
    target.add_argument("--all", "--batch", dest="all", action="store_true", help="运行任务目录中的全部任务")
    parser.add_argument("--policy", choices=("scripted", "replay"), default="scripted")
    parser.add_argument("--from", dest="source", type=Path, help="replay 策略读取的轨迹文件")
    parser.add_argument("--runs", type=int, default=1, help="每个任务运行次数（种子依次 +1）")
    parser.add_argument("--corrupt", type=_kinds, default=(), help="逗号分隔的错误类型")
    parser.add_argument("--corruption-rate", type=float, default=None, help="每次运行注入错误的概率")
    parser.add_argument("--out", type=Path, help="轨迹文件（默认 <output_dir>/trajectories.jsonl）")
    parser.add_argument("--append", action="store_true", help="追加而不是覆盖轨迹文件")
    parser.set_defaults(handler=lambda args: run_rollout(args, config_loader(args)))


def summary_rows(records: list[TrajectoryRecord]) -> list[list]:
    return [
        [
            r.task_id,
            r.seed,
            r.outcome,
            r.reward.orm,
            f"{r.reward.step_mean:.3f}",
            r.reward.format,
            f"{r.reward.total:.3f}",
            ",".join(r.corruptions) or "-",
        ]
        for r in records
    ]


def run_rollout(args: argparse.Namespace, config: AppConfig) -> int:
    if args.runs < 1:
        raise UsageError("--runs 必须 >= 1")
    tasks = load_tasks(config.paths.tasks_dir) if args.all else [resolve_task(args.task, config.paths.tasks_dir)]
    gym = CadGym.from_config(config)
    judge = GeometricJudge.from_config(config.reward)
    weights = RewardWeights.from_config(config.reward)

    replays: dict[str, TrajectoryRecord] = {}
    if args.policy == "replay":
        if args.source is None:
            raise UsageError("--policy replay 需要 --from 轨迹文件")
        for record in load_trajectories(args.source):
            replays.setdefault(record.task_id, record)

    rate = args.corruption_rate if args.corruption_rate is not None else (1.0 if args.corrupt else 0.0)
    try:
        corruption = CorruptionSpec(tuple(args.corrupt), rate)
    except ValueError as e:
        raise UsageError(str(e)) from e

    records = []
    for task in tasks:
        for i in range(args.runs):
            seed = config.seed + i
            if args.policy == "replay":
                if task.id not in replays:
                    logger.warning("no recorded trajectory for task {}, skipped", task.id)
                    continue
                policy = ReplayPolicy(replays[task.id])
            else:
                policy = ScriptedPolicy(seed, corruption)
            records.append(run_episode(gym, task, policy, judge, weights, seed=seed))

    out = args.out or Path(config.paths.output_dir) / "trajectories.jsonl"
    write_trajectories(out, records, append=args.append)
    print(
        tabulate(
            summary_rows(records),
            headers=["task", "seed", "outcome", "orm", "step_mean", "format", "total", "corruptions"],
        )
    )
    logger.info("{} trajectories written to {}", len(records), out)
    return EXIT_OK if records and all(r.outcome == "success" for r in records) else EXIT_FAILURE
