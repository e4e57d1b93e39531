from __future__ import annotations

"""eval：按 id 配对生成目录与参考目录中的模型，计算几何指标并输出报告。

目录中可以放三种文件：
- 任务文件（*.json，含 ground_truth_program）
- 程序文件（*.json，{"id": ..., "program": [...], "completed": true}）
- 轨迹文件（*.jsonl，按 task_id 配对，final_answer 作为是否完成）
"""

import argparse
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError
from tabulate import tabulate

from cadgym.cli import EXIT_OK, ConfigLoader, UsageError
from cadgym.config import AppConfig
from cadgym.services.geo_metrics import (
    EpisodeOutcome,
    PointCloud,
    chamfer,
    chamfer_matrix,
    iou,
    is_valid_outcome,
    jsd,
    mmd_cov,
    normalize,
    parameter_density,
    part_count,
    sample_points,
    voxel_distribution,
)
from cadgym.services.geometry_kernel import CsgSolid, EmptySolid
from cadgym.services.gym import Task, TaskFileError, reconstruct
from cadgym.services.tool_library import ToolCall
from cadgym.services.trajectory_store import load_trajectories


class ProgramFile(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    program: tuple[ToolCall, ...]
    completed: bool = True


@dataclass(frozen=True)
class ShapeSample:
    id: str
    program: tuple[ToolCall, ...]
    completed: bool
    source: str


JSD_SCALE = 100.0


def _scaled(value: float | None, scale: float) -> float | None:
    return None if value is None else value * scale


@dataclass(frozen=True)
class PairMetrics:
    id: str
    valid: bool
    cd: float | None = None
    iou: float | None = None
    jsd: float | None = None
    pd: float | None = None

    @property
    def jsd_x100(self) -> float | None:
        return _scaled(self.jsd, JSD_SCALE)

    def to_dict(self) -> dict:
        return {"type": "pair", **self.__dict__, "jsd_x100": self.jsd_x100}


def _read_json(path: Path) -> ShapeSample:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise TaskFileError(f"无法读取 {path}：{e}") from e
    try:
        if isinstance(data, dict) and "ground_truth_program" in data:
            task = Task.model_validate(data)
            return ShapeSample(task.id, task.ground_truth_program, True, str(path))
        prog = ProgramFile.model_validate(data)
    except ValidationError as e:
        raise TaskFileError(f"{path} 不是任务文件也不是程序文件：\n{e}") from e
    return ShapeSample(prog.id, prog.program, prog.completed, str(path))


def load_samples(directory: str | Path) -> dict[str, ShapeSample]:
    """按文件名顺序读取目录；同一 id 只保留第一次出现。"""
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"目录不存在：{directory}")
    found: list[ShapeSample] = []
    for path in sorted(directory.iterdir()):
        if path.suffix == ".json":
            found.append(_read_json(path))
        elif path.suffix == ".jsonl":
            found.extend(
                ShapeSample(r.task_id, tuple(r.program), r.final_answer, str(path))
                for r in load_trajectories(path)
            )
    samples: dict[str, ShapeSample] = {}
    for s in found:
        if s.id in samples:
            logger.warning("duplicate sample id {} in {}, keeping the first", s.id, s.source)
            continue
        samples[s.id] = s
    return samples


def _cloud(solid: CsgSolid, sample_id: str, config: AppConfig) -> PointCloud:
    m = config.metrics
    return normalize(sample_points(solid, m.n_points, config.seed, m.resolution, sample_id, config.geometry.eps_geom))


def evaluate(
    generated: dict[str, ShapeSample],
    reference: dict[str, ShapeSample],
    config: AppConfig,
    cd_scale: float = 1.0,
) -> tuple[list[PairMetrics], dict]:
    """逐对指标 + 集合指标；输出顺序与参考样本顺序一致。"""
    m, geometry = config.metrics, config.geometry
    pairs: list[PairMetrics] = []
    gen_clouds: list[PointCloud] = []
    ref_clouds: list[PointCloud] = []
    iou_values, cd_values, pd_values = [], [], []

    for sample_id, ref in reference.items():
        ref_solid = reconstruct(ref.program, geometry)
        try:
            ref_cloud = _cloud(ref_solid, sample_id, config) if ref_solid is not None else None
        except EmptySolid:
            ref_cloud = None
        if ref_cloud is None:
            logger.warning("reference {} produced no solid, skipped", sample_id)
            continue
        ref_clouds.append(ref_cloud)

        gen = generated.get(sample_id)
        if gen is None:
            logger.warning("no generated sample for {}", sample_id)
            pairs.append(PairMetrics(sample_id, valid=False))
            continue
        gen_solid = reconstruct(gen.program, geometry)
        if not is_valid_outcome(EpisodeOutcome(gen.completed, gen_solid), m.resolution):
            pairs.append(PairMetrics(sample_id, valid=False))
            continue

        gen_cloud = _cloud(gen_solid, sample_id, config)
        gen_clouds.append(gen_cloud)
        parts = part_count(gen.program)
        pair = PairMetrics(
            sample_id,
            valid=True,
            cd=chamfer(gen_cloud, ref_cloud) * cd_scale,
            iou=iou(gen_solid, ref_solid, m.resolution, geometry.eps_geom),
            jsd=jsd(
                voxel_distribution(gen_cloud, m.jsd_resolution, m.jsd_smoothing),
                voxel_distribution(ref_cloud, m.jsd_resolution, m.jsd_smoothing),
            ),
            pd=parameter_density(gen.program, parts) if parts else None,
        )
        pairs.append(pair)
        cd_values.append(pair.cd)
        iou_values.append(pair.iou)
        if pair.pd is not None:
            pd_values.append(pair.pd)

    for sample_id in generated.keys() - reference.keys():
        logger.warning("generated sample {} has no reference, ignored", sample_id)

    summary: dict = {
        "type": "summary",
        "pairs": len(pairs),
        "ir": (sum(not p.valid for p in pairs) / len(pairs)) if pairs else None,
        "cd": float(np.mean(cd_values)) if cd_values else None,
        "iou": float(np.mean(iou_values)) if iou_values else None,
        "pd": float(np.mean(pd_values)) if pd_values else None,
        "mmd": None,
        "cov": None,
        "jsd": None,
    }
    if gen_clouds and ref_clouds:
        mmd, cov = mmd_cov(chamfer_matrix(gen_clouds, ref_clouds))
        summary["mmd"], summary["cov"] = mmd * cd_scale, cov
        summary["jsd"] = jsd(
            voxel_distribution(gen_clouds, m.jsd_resolution, m.jsd_smoothing),
            voxel_distribution(ref_clouds, m.jsd_resolution, m.jsd_smoothing),
        )
    summary["jsd_x100"] = _scaled(summary["jsd"], JSD_SCALE)
    return pairs, summary


def build_eval_command(subparsers, config_loader: ConfigLoader) -> None:
    parser = subparsers.add_parser("eval", help="计算生成模型与参考模型的几何指标")
    parser.add_argument("generated_dir", type=Path)
    parser.add_argument("reference_dir", type=Path)
    parser.add_argument("--cd-scale", type=float, help="Chamfer 距离与 MMD 的显示倍数（默认取配置）")
    parser.add_argument("--n-points", type=int, help="每个模型采样的点数")
    parser.add_argument("--resolution", type=int, help="体素分辨率")
    parser.add_argument("--out", type=Path, help="JSONL 报告（默认 <output_dir>/eval_report.jsonl）")
    parser.set_defaults(handler=lambda args: run_eval(args, config_loader(args)))


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def run_eval(args: argparse.Namespace, config: AppConfig) -> int:
    config = config.override(
        metrics={"cd_scale": args.cd_scale, "n_points": args.n_points, "resolution": args.resolution}
    )
    generated = load_samples(args.generated_dir)
    reference = load_samples(args.reference_dir)
    if not reference:
        raise UsageError(f"参考目录 {args.reference_dir} 中没有样本")

    pairs, summary = evaluate(generated, reference, config, config.metrics.cd_scale)

    out = args.out or Path(config.paths.output_dir) / "eval_report.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as f:
        for row in [p.to_dict() for p in pairs] + [summary]:
            f.write(json.dumps(row, sort_keys=True) + "\n")

    print(
        tabulate(
            [[p.id, "yes" if p.valid else "no", _fmt(p.cd), _fmt(p.iou), _fmt(p.jsd), _fmt(p.jsd_x100), _fmt(p.pd)] for p in pairs],
            headers=["id", "valid", "CD", "IoU", "JSD", "JSD×100", "PD"],
        )
    )
    print()
    print(
        tabulate(
            [[k.upper(), _fmt(summary[k])] for k in ("ir", "cd", "mmd", "iou", "cov", "jsd", "jsd_x100", "pd")],
            headers=["metric", "value"],
        )
    )
    logger.info("evaluated {} pairs, report written to {}", len(pairs), out)
    return EXIT_OK
