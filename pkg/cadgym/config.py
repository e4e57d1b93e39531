from __future__ import annotations

"""应用配置。

单一的 JSON 配置文件 + 命令行覆盖；环境变量只允许覆盖路径。
未知字段一律拒绝，种子必须写在配置里，保证每次运行可复现。
"""

import json
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "default.json"
BUNDLED_TASKS_DIR = Path(__file__).resolve().parent / "data" / "tasks"

ENV_TASKS_DIR = "CADGYM_TASKS_DIR"
ENV_OUTPUT_DIR = "CADGYM_OUTPUT_DIR"


class ConfigError(RuntimeError):
    """配置文件读取或校验失败。"""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Section):
    """几何内核容差。"""

    arc_segments: int = Field(64, ge=8, le=4096)
    loop_close_tol: float = Field(1e-6, gt=0, le=1e-2)
    eps_geom: float = Field(1e-9, gt=0, le=1e-3)
    empty_check_resolution: int = Field(32, ge=4, le=256)


class RewardConfig(_Section):
    """混合奖励权重 (α, β, γ) 与参考判定器参数。"""

    alpha: float = Field(1.0, ge=0)
    beta: float = Field(0.5, ge=0)
    gamma: float = Field(0.5, ge=0)
    judge_iou_threshold: float = Field(0.95, gt=0, le=1)
    judge_resolution: int = Field(64, ge=4, le=256)

    @model_validator(mode="after")
    def _any_positive(self) -> "RewardConfig":
        if max(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("reward 权重至少有一个大于 0")
        return self


class GrpoConfig(_Section):
    group_size: int = Field(8, ge=2)
    clip_eps: float = Field(0.2, gt=0, lt=1)
    kl_coef: float = Field(0.01, ge=0)
    baseline: Literal["mean", "max"] = "mean"


class CurriculumConfig(_Section):
    """课程调度参数；initial_ppl/decay 描述 train-sim 用的合成策略。"""

    alpha: float = Field(0.7, gt=0, lt=1)
    window: int = Field(16, ge=1)
    n_update: int = Field(32, ge=1)
    max_iter_per_level: int = Field(200, ge=1)
    initial_ppl: float = Field(10.0, ge=1)
    decay: float = Field(0.9, gt=0, le=1)
    corruption_rate: float = Field(0.5, ge=0, le=1)


class GymConfig(_Section):
    max_turns: int = Field(40, ge=1)
    max_failure_streak: int = Field(5, ge=1)


class MetricsConfig(_Section):
    n_points: int = Field(2048, ge=1)
    resolution: int = Field(64, ge=4, le=256)
    jsd_resolution: int = Field(32, ge=2, le=128)
    jsd_smoothing: float = Field(1e-12, ge=0)
    cd_scale: float = Field(1.0, gt=0)


class PathsConfig(_Section):
    tasks_dir: str = str(BUNDLED_TASKS_DIR)
    output_dir: str = "./outputs"


class AppConfig(_Section):
    """应用配置。

    - seed：所有子命令的随机种子（必填）
    - 其余分节对应几何、奖励、GRPO、课程、gym、指标与路径
    """

    seed: int
    log_level: Literal["TRACE", "DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    geometry: GeometryConfig = GeometryConfig()
    reward: RewardConfig = RewardConfig()
    grpo: GrpoConfig = GrpoConfig()
    curriculum: CurriculumConfig = CurriculumConfig()
    gym: GymConfig = GymConfig()
    metrics: MetricsConfig = MetricsConfig()
    paths: PathsConfig = PathsConfig()

    @staticmethod
    def load(path: str | os.PathLike[str] | None = None) -> "AppConfig":
        """从 JSON 文件加载配置（默认 configs/default.json）。"""
        path = Path(path) if path else DEFAULT_CONFIG_PATH
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"无法读取配置文件 {path}：{e}") from e
        try:
            return AppConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"配置文件 {path} 校验失败：\n{e}") from e

    @staticmethod
    def from_env(path: str | os.PathLike[str] | None = None) -> "AppConfig":
        """加载配置文件，再用环境变量覆盖路径。"""
        config = AppConfig.load(path)
        paths = config.paths.model_copy(
            update={
                k: v
                for k, v in (
                    ("tasks_dir", os.environ.get(ENV_TASKS_DIR)),
                    ("output_dir", os.environ.get(ENV_OUTPUT_DIR)),
                )
                if v
            }
        )
        return config.model_copy(update={"paths": paths})

    def override(self, **sections: dict) -> "AppConfig":
        """命令行覆盖：按分节合并后重新校验（flags 优先）。"""
        data = self.model_dump()
        for name, values in sections.items():
            if isinstance(data.get(name), dict):
                data[name].update({k: v for k, v in values.items() if v is not None})
            elif values is not None:
                data[name] = values
        try:
            return AppConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"命令行参数不合法：\n{e}") from e
