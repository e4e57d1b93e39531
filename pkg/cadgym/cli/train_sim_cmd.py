from __future__ import annotations

"""train-sim：用合成困惑度策略跑一遍课程 RL 循环，输出级别轨迹与损失诊断。"""

import argparse
import json
from pathlib import Path

from loguru import logger
from tabulate import tabulate

from cadgym.cli import EXIT_FAILURE, EXIT_OK, ConfigLoader
from cadgym.config import AppConfig
from cadgym.services.curriculum import CurriculumTrainer, SyntheticPerplexityPolicy, TrainTrace
from cadgym.services.gym import CadGym, load_tasks
from cadgym.services.reward import GeometricJudge


def build_train_sim_command(subparsers, config_loader: ConfigLoader) -> None:
    parser = subparsers.add_parser("train-sim", help="模拟课程强化学习训练")
    parser.add_argument("--alpha", type=float, help="课程阈值系数 α ∈ (0, 1)")
    parser.add_argument("--initial-ppl", type=float, help="合成策略在每一级起点的困惑度")
    parser.add_argument("--decay", type=float, help="合成策略每步困惑度衰减率；1 表示恒定")
    parser.add_argument("--max-iter", type=int, help="每一级最多迭代次数")
    parser.add_argument("--window", type=int, help="滑动窗口长度")
    parser.add_argument("--n-update", type=int, help="每累积多少条轨迹做一次策略更新")
    parser.add_argument("--group-size", type=int, help="每个任务的 rollout 数 G")
    parser.add_argument("--out", type=Path, help="训练轨迹 JSON（默认 <output_dir>/train_trace.json）")
    parser.set_defaults(handler=lambda args: run_train_sim(args, config_loader(args)))


def trace_table(trace: TrainTrace) -> str:
    rows = [
        [level, trace.steps_per_level.get(level, 0), f"{threshold:.4f}"]
        for level, threshold in sorted(trace.thresholds.items())
    ]
    return tabulate(rows, headers=["level", "steps", "threshold"])


def run_train_sim(args: argparse.Namespace, config: AppConfig) -> int:
    config = config.override(
        curriculum={
            "alpha": args.alpha,
            "initial_ppl": args.initial_ppl,
            "decay": args.decay,
            "max_iter_per_level": args.max_iter,
            "window": args.window,
            "n_update": args.n_update,
        },
        grpo={"group_size": args.group_size},
    )
    c = config.curriculum
    policy = SyntheticPerplexityPolicy(c.initial_ppl, c.decay, config.seed)
    # 参考策略固定在训练起点
    reference = SyntheticPerplexityPolicy(c.initial_ppl, 1.0, config.seed)
    trainer = CurriculumTrainer(
        CadGym.from_config(config),
        load_tasks(config.paths.tasks_dir),
        policy,
        reference,
        GeometricJudge.from_config(config.reward),
        config,
    )
    trace = trainer.run()

    out = args.out or Path(config.paths.output_dir) / "train_trace.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(trace.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    print(trace_table(trace))
    if trace.updates:
        print()
        print(
            tabulate(
                [[u.step, u.level, u.groups, u.loss, u.policy_loss, u.kl, u.clip_fraction] for u in trace.updates],
                headers=["step", "level", "groups", "loss", "policy_loss", "kl", "clip_frac"],
                floatfmt=".4f",
            )
        )
    print(f"\nstatus: {trace.status}, total steps: {trace.total_steps}")
    logger.info("train trace written to {}", out)
    return EXIT_OK if trace.status == "completed" else EXIT_FAILURE
