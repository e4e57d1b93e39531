from __future__ import annotations

"""混合奖励：逐步奖励、格式奖励、轨迹结果奖励（判定器）与加权汇总。"""

from typing import Protocol, Sequence, runtime_checkable

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import RewardConfig
from .cot_format import FormatVerdict
from .feedback import Observation
from .geo_metrics import iou
from .geometry_kernel import CsgSolid, bounding_box


class RewardWeights(BaseModel):
    """(α, β, γ)：结果、逐步、格式三项的权重。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(1.0, ge=0)
    beta: float = Field(0.5, ge=0)
    gamma: float = Field(0.5, ge=0)

    @model_validator(mode="after")
    def _any_positive(self) -> "RewardWeights":
        if max(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("at least one reward weight must be > 0")
        return self

    @classmethod
    def from_config(cls, config: RewardConfig) -> "RewardWeights":
        return cls(alpha=config.alpha, beta=config.beta, gamma=config.gamma)


class RewardBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    orm: int
    step_rewards: tuple[int, ...]
    step_mean: float
    format: int
    total: float


class JudgeVerdict(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    yes_prob: float = Field(ge=0, le=1)
    no_prob: float = Field(ge=0, le=1)


YES = JudgeVerdict(yes_prob=1.0, no_prob=0.0)
NO = JudgeVerdict(yes_prob=0.0, no_prob=1.0)


@runtime_checkable
class TrajectoryJudge(Protocol):
    """轨迹级判定器接口；相同输入必须给出相同结论。"""

    def judge(
        self,
        instruction: str,
        trajectory: str,
        final_solid: CsgSolid | None = None,
        gt_solid: CsgSolid | None = None,
    ) -> JudgeVerdict: ...


def step_reward(obs: Observation) -> int:
    return 1 if obs.label == "success" else 0


def step_mean(rewards: Sequence[int]) -> float:
    return sum(rewards) / len(rewards) if rewards else 0.0


def format_reward(verdict: FormatVerdict) -> int:
    return 1 if verdict.ok else 0


def orm_reward(verdict: JudgeVerdict) -> int:
    # 平局判 NO
    return 1 if verdict.yes_prob > verdict.no_prob else 0


def aggregate_reward(
    orm: int,
    step_rewards: Sequence[int],
    fmt: int,
    weights: RewardWeights,
) -> RewardBreakdown:
    mean = step_mean(step_rewards)
    return RewardBreakdown(
        orm=orm,
        step_rewards=tuple(step_rewards),
        step_mean=mean,
        format=fmt,
        total=weights.alpha * orm + weights.beta * mean + weights.gamma * fmt,
    )


def reference_judge(
    final: CsgSolid | None,
    gt: CsgSolid | None,
    iou_threshold: float = 0.95,
    resolution: int = 64,
) -> JudgeVerdict:
    """几何参考判定器：IoU ≥ 阈值为 YES；任一实体退化为 NO。"""
    if final is None or gt is None or bounding_box(final) is None or bounding_box(gt) is None:
        return NO
    return YES if iou(final, gt, resolution) >= iou_threshold else NO


class GeometricJudge:
    """TrajectoryJudge 的默认实现：只看几何，不读文本。"""

    def __init__(self, iou_threshold: float = 0.95, resolution: int = 64) -> None:
        self.iou_threshold = iou_threshold
        self.resolution = resolution

    @classmethod
    def from_config(cls, config: RewardConfig) -> "GeometricJudge":
        return cls(config.judge_iou_threshold, config.judge_resolution)

    def judge(
        self,
        instruction: str,
        trajectory: str,
        final_solid: CsgSolid | None = None,
        gt_solid: CsgSolid | None = None,
    ) -> JudgeVerdict:
        return reference_judge(final_solid, gt_solid, self.iou_threshold, self.resolution)
