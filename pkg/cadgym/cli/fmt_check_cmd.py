from __future__ import annotations

"""fmt-check：检查 CoT 转录文本的格式（文本文件或轨迹 JSONL）。"""

import argparse
import json
from pathlib import Path

from cadgym.cli import EXIT_FAILURE, EXIT_OK, ConfigLoader, UsageError
from cadgym.config import AppConfig
from cadgym.services.cot_format import FormatVerdict, check_transcript, render_transcript
from cadgym.services.trajectory_store import load_trajectories


def build_fmt_check_command(subparsers, config_loader: ConfigLoader) -> None:
    parser = subparsers.add_parser("fmt-check", help="检查转录文本是否满足格式奖励的全部条件")
    parser.add_argument("transcript", type=Path, help="转录文本文件，或 .jsonl 轨迹文件")
    parser.set_defaults(handler=lambda args: run_fmt_check(args, config_loader(args)))


def collect_verdicts(path: Path) -> list[tuple[str, FormatVerdict]]:
    if path.suffix == ".jsonl":
        return [
            (f"{path.name}:{i}:{r.task_id}", check_transcript(render_transcript(r.transcript)))
            for i, r in enumerate(load_trajectories(path), start=1)
        ]
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise UsageError(f"无法读取 {path}：{e}") from e
    return [(path.name, check_transcript(text))]


def run_fmt_check(args: argparse.Namespace, config: AppConfig) -> int:
    verdicts = collect_verdicts(args.transcript)
    for source, verdict in verdicts:
        print(json.dumps({"source": source, **verdict.model_dump(mode="json")}, ensure_ascii=False))
    return EXIT_OK if all(v.ok for _, v in verdicts) else EXIT_FAILURE
