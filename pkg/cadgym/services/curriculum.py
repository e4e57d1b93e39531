from __future__ import annotations

"""按零件数分级的困惑度课程调度，以及用合成策略驱动的训练模拟。

调度器是纯函数：curriculum_step 接收旧状态、返回新状态。
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Protocol, Sequence, runtime_checkable

import numpy as np
from loguru import logger

from ..config import AppConfig, CurriculumConfig
from .gym import CadGym, Task, TrajectoryRecord, run_episode, trajectory_tokens
from .policy_optim import (
    PolicyInterface,
    RolloutGroup,
    TokenBatch,
    grpo_loss,
    group_advantages,
    perplexity,
)
from .reward import RewardWeights, TrajectoryJudge
from .scripted_policy import CORRUPTION_KINDS, CorruptionSpec, ScriptedPolicy

Status = Literal["running", "completed", "stalled"]
LevelPplSource = Callable[[int], Sequence[float]]


class CurriculumError(ValueError):
    """课程调度输入不合法。"""


class EmptyValidation(CurriculumError):
    pass


@runtime_checkable
class TrainablePolicy(PolicyInterface, Protocol):
    def update(self, level: int, step: int) -> None: ...


@dataclass(frozen=True)
class CurriculumState:
    level: int
    num_levels: int
    threshold: float
    alpha: float
    window: int
    n_update: int
    max_iter: int
    recent_ppls: tuple[float, ...] = ()
    update_counter: int = 0
    buffer_size: int = 0
    update_due: bool = False
    level_steps: int = 0
    total_steps: int = 0
    status: Status = "running"


def compute_threshold(validation_ppls: Sequence[float], alpha: float) -> float:
    """δ = α · mean(validation perplexity)。"""
    if len(validation_ppls) == 0:
        raise EmptyValidation("validation perplexities are empty")
    if not 0 < alpha < 1:
        raise CurriculumError(f"alpha must be in (0, 1), got {alpha}")
    if min(validation_ppls) < 1:
        raise CurriculumError("perplexities must be >= 1")
    return alpha * float(np.mean(validation_ppls))


def start_curriculum(
    num_levels: int,
    source: LevelPplSource,
    config: CurriculumConfig,
) -> CurriculumState:
    if num_levels < 1:
        raise CurriculumError("at least one level is required")
    return CurriculumState(
        level=1,
        num_levels=num_levels,
        threshold=compute_threshold(source(1), config.alpha),
        alpha=config.alpha,
        window=config.window,
        n_update=config.n_update,
        max_iter=config.max_iter_per_level,
    )


def curriculum_step(
    state: CurriculumState,
    new_ppl: float,
    source: LevelPplSource,
    n_trajectories: int = 1,
) -> CurriculumState:
    """记录一次困惑度；窗口均值低于 δ 时进入下一级并用下一级验证集重算 δ。"""
    if state.status != "running":
        return state
    window = (state.recent_ppls + (float(new_ppl),))[-state.window:]
    buffer_size = state.buffer_size + n_trajectories
    update_due = buffer_size >= state.n_update
    state = replace(
        state,
        recent_ppls=window,
        buffer_size=0 if update_due else buffer_size,
        update_due=update_due,
        update_counter=state.update_counter + int(update_due),
        level_steps=state.level_steps + 1,
        total_steps=state.total_steps + 1,
    )

    if float(np.mean(window)) < state.threshold:
        if state.level == state.num_levels:
            return replace(state, status="completed", recent_ppls=())
        level = state.level + 1
        return replace(
            state,
            level=level,
            threshold=compute_threshold(source(level), state.alpha),
            recent_ppls=(),
            level_steps=0,
        )
    if state.level_steps >= state.max_iter:
        return replace(state, status="stalled")
    return state


class SyntheticPerplexityPolicy:
    """合成策略：第 step 步的困惑度为 initial_ppl · decay^step，每个 token 概率相同。

    进入新的级别时 step 归零。decay = 1 即为恒定困惑度。
    """

    def __init__(self, initial_ppl: float = 10.0, decay: float = 0.9, seed: int = 0) -> None:
        self.initial_ppl = initial_ppl
        self.decay = decay
        self.level = 1
        self.step = 0
        self._actor = ScriptedPolicy(seed)

    @property
    def current_ppl(self) -> float:
        return self.initial_ppl * self.decay**self.step

    def update(self, level: int, step: int) -> None:
        self.level, self.step = level, step

    def sample(self, state) -> str:
        return self._actor.sample(state)

    def logprobs(self, tokens: Sequence[str]) -> np.ndarray:
        return np.full(len(tokens), -math.log(self.current_ppl))


# ---------------------------------------------------------------------------
# 训练模拟
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelTransition:
    step: int
    from_level: int
    to_level: int
    threshold: float


@dataclass(frozen=True)
class UpdateRecord:
    step: int
    level: int
    groups: int
    loss: float
    policy_loss: float
    kl: float
    clip_fraction: float


@dataclass
class TrainTrace:
    status: Status = "running"
    total_steps: int = 0
    levels: list[int] = field(default_factory=list)
    ppls: list[float] = field(default_factory=list)
    thresholds: dict[int, float] = field(default_factory=dict)
    steps_per_level: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    transitions: list[LevelTransition] = field(default_factory=list)
    updates: list[UpdateRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "total_steps": self.total_steps,
            "levels": self.levels,
            "ppls": self.ppls,
            "thresholds": {str(k): v for k, v in self.thresholds.items()},
            "steps_per_level": {str(k): v for k, v in sorted(self.steps_per_level.items())},
            "transitions": [t.__dict__ for t in self.transitions],
            "updates": [u.__dict__ for u in self.updates],
        }


def _batch(record: TrajectoryRecord, policy: PolicyInterface, reference: PolicyInterface) -> TokenBatch:
    tokens, mask = trajectory_tokens(record)
    # 没有真实的梯度更新，采样策略即当前策略
    return TokenBatch.on_policy(policy.logprobs(tokens), reference.logprobs(tokens), mask)


class CurriculumTrainer:
    """在线课程 RL 循环：按级别采样任务、成组 rollout、定期做一次策略更新（只计算损失诊断）。"""

    def __init__(
        self,
        gym: CadGym,
        tasks: Sequence[Task],
        policy: TrainablePolicy,
        reference: PolicyInterface,
        judge: TrajectoryJudge,
        config: AppConfig,
    ) -> None:
        if not tasks:
            raise CurriculumError("no task to train on")
        self.gym = gym
        self.policy = policy
        self.reference = reference
        self.judge = judge
        self.config = config
        self.weights = RewardWeights.from_config(config.reward)
        levels = sorted({t.level for t in tasks})
        # 课程级别 1..L 映射到任务的零件数
        self.by_level = {i: [t for t in tasks if t.level == lv] for i, lv in enumerate(levels, start=1)}
        self.rng = np.random.default_rng(config.seed)
        self._validation: dict[str, TrajectoryRecord] = {}

    def _validation_record(self, task: Task) -> TrajectoryRecord:
        if task.id not in self._validation:
            self._validation[task.id] = run_episode(
                self.gym, task, ScriptedPolicy(self.config.seed), self.judge, self.weights
            )
        return self._validation[task.id]

    def validation_ppls(self, level: int) -> list[float]:
        """新级别开始时的验证困惑度（策略在该级别的起点）。"""
        self.policy.update(level, 0)
        return [
            perplexity(_batch(self._validation_record(t), self.policy, self.reference))
            for t in self.by_level[level]
        ]

    def _rollout_group(self, task: Task) -> list[TrajectoryRecord]:
        corruption = CorruptionSpec(CORRUPTION_KINDS, self.config.curriculum.corruption_rate)
        records = []
        for _ in range(self.config.grpo.group_size):
            seed = int(self.rng.integers(2**31))
            actor = ScriptedPolicy(seed, corruption)
            records.append(run_episode(self.gym, task, actor, self.judge, self.weights, seed=seed))
        return records

    def _update(self, buffer: list[RolloutGroup], state: CurriculumState) -> UpdateRecord:
        grpo = self.config.grpo
        results = [
            grpo_loss(g, group_advantages(g.rewards, grpo.baseline), grpo.clip_eps, grpo.kl_coef)
            for g in buffer
        ]
        n = len(results)
        return UpdateRecord(
            step=state.total_steps,
            level=state.level,
            groups=n,
            loss=sum(r.loss for r in results) / n,
            policy_loss=sum(r.policy_loss for r in results) / n,
            kl=sum(r.kl for r in results) / n,
            clip_fraction=sum(r.clip_fraction for r in results) / n,
        )

    def run(self) -> TrainTrace:
        trace = TrainTrace()
        state = start_curriculum(len(self.by_level), self.validation_ppls, self.config.curriculum)
        trace.thresholds[1] = state.threshold
        buffer: list[RolloutGroup] = []

        while state.status == "running":
            level = state.level
            pool = self.by_level[level]
            task = pool[int(self.rng.integers(len(pool)))]
            records = self._rollout_group(task)
            batches = tuple(_batch(r, self.policy, self.reference) for r in records)
            buffer.append(
                RolloutGroup(batches, tuple(r.reward.total for r in records), task.instruction)
            )
            ppl = float(np.mean([perplexity(b) for b in batches]))

            state = curriculum_step(state, ppl, self.validation_ppls, n_trajectories=len(records))
            trace.levels.append(level)
            trace.ppls.append(ppl)
            trace.steps_per_level[level] += 1
            if state.update_due:
                trace.updates.append(self._update(buffer, state))
                buffer.clear()
            if state.level != level:
                trace.transitions.append(LevelTransition(state.total_steps, level, state.level, state.threshold))
                trace.thresholds[state.level] = state.threshold
                logger.info("level {} -> {} at step {}, δ={:.4f}", level, state.level, state.total_steps, state.threshold)
            else:
                self.policy.update(state.level, state.level_steps)

        if buffer:
            trace.updates.append(self._update(buffer, state))

        trace.status = state.status
        trace.total_steps = state.total_steps
        trace.steps_per_level = dict(trace.steps_per_level)
        logger.info("curriculum {} after {} steps", state.status, state.total_steps)
        return trace
