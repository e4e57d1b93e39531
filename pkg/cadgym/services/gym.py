from __future__ import annotations

"""有限步长 MDP 封装：任务加载、episode 生命周期、轨迹记录与演示回放。"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Literal, Sequence

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..config import AppConfig, GeometryConfig, GymConfig
from .cad_document import DocumentState
from .cot_format import (
    AgentOutputError,
    Segment,
    ToolResponse,
    check_transcript,
    encode_tool_call,
    parse_agent_output,
    render_transcript,
    response_body,
    segment_tokens,
)
from .feedback import Observation, parse_failure, render_feedback
from .geo_metrics import part_count
from .geometry_kernel import CsgSolid
from .prompts import render_episode_prompt
from .reward import (
    NO,
    JudgeVerdict,
    RewardBreakdown,
    RewardWeights,
    TrajectoryJudge,
    aggregate_reward,
    format_reward,
    orm_reward,
    step_reward,
)
from .tool_library import ToolCall, call_tool

if TYPE_CHECKING:
    import numpy as np

    from .policy_optim import PolicyInterface

SCHEMA_VERSION = 1
INTERACTIVE_TASK_ID = "interactive"

Termination = Literal["answer", "max_turns", "failure_streak", "closed"]


class TaskFileError(RuntimeError):
    """任务文件无法读取或不合法。"""


class ReplayError(RuntimeError):
    """回放时某一步失败；step_index 从 0 开始。"""

    def __init__(self, step_index: int, message: str) -> None:
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index


class EpisodeFinished(RuntimeError):
    """episode 已结束，不再接受 step。"""


class Task(BaseModel):
    """建模任务：指令 + 零件数 + 标准程序。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    id: str = Field(min_length=1)
    instruction: str = Field(min_length=1)
    level: int = Field(ge=1)
    ground_truth_program: tuple[ToolCall, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _level_matches_parts(self) -> "Task":
        parts = part_count(self.ground_truth_program)
        if parts != self.level:
            raise ValueError(f"level {self.level} 与拉伸次数 {parts} 不一致")
        return self


class TurnRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    raw_output: str
    think: str | None = None
    tool_calls: tuple[ToolCall, ...] = ()
    observations: tuple[Observation, ...] = ()
    step_rewards: tuple[int, ...] = ()
    answer: str | None = None
    parse_error: str | None = None


class TrajectoryRecord(BaseModel):
    """一条完整轨迹；weights 与 judge 结论随记录保存，便于重算奖励。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    task_id: str
    instruction: str
    prompt: str = ""
    seed: int | None = None
    turns: tuple[TurnRecord, ...]
    transcript: tuple[Segment, ...]
    final_answer: bool
    final_solid_name: str | None
    termination: Termination
    judge: JudgeVerdict
    weights: RewardWeights
    reward: RewardBreakdown
    outcome: Literal["success", "fail"]
    corruptions: tuple[str, ...] = ()

    @property
    def step_rewards(self) -> list[int]:
        return [r for t in self.turns for r in t.step_rewards]

    @property
    def program(self) -> list[ToolCall]:
        return [c for t in self.turns for c in t.tool_calls]


@dataclass
class EpisodeState:
    task: Task | None
    document: DocumentState
    prompt: str
    transcript: list[Segment] = field(default_factory=list)
    turns: list[TurnRecord] = field(default_factory=list)
    turn: int = 0
    done: bool = False
    failure_streak: int = 0
    final_answer: bool = False
    termination: Termination | None = None


# ---------------------------------------------------------------------------
# 任务文件
# ---------------------------------------------------------------------------


def load_task(path: str | os.PathLike[str]) -> Task:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise TaskFileError(f"无法读取任务文件 {path}：{e}") from e
    try:
        return Task.model_validate(data)
    except ValidationError as e:
        raise TaskFileError(f"任务文件 {path} 校验失败：\n{e}") from e


def load_tasks(directory: str | os.PathLike[str]) -> list[Task]:
    """读取目录下全部 *.json 任务，按 (level, id) 排序。"""
    directory = Path(directory)
    if not directory.is_dir():
        raise TaskFileError(f"任务目录不存在：{directory}")
    tasks = [load_task(p) for p in sorted(directory.glob("*.json"))]
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise TaskFileError(f"任务目录 {directory} 中存在重复的 id")
    return sorted(tasks, key=lambda t: (t.level, t.id))


def resolve_task(ref: str, tasks_dir: str | os.PathLike[str]) -> Task:
    """ref 可以是任务文件路径，也可以是任务目录中的 id。"""
    if Path(ref).is_file():
        return load_task(ref)
    for task in load_tasks(tasks_dir):
        if task.id == ref:
            return task
    raise TaskFileError(f"找不到任务：{ref}")


# ---------------------------------------------------------------------------
# 回放
# ---------------------------------------------------------------------------


def replay_document(
    program: Sequence[ToolCall],
    geometry: GeometryConfig | None = None,
) -> DocumentState:
    doc = DocumentState(geometry)
    for i, call in enumerate(program):
        result = call_tool(doc, call)
        if not result.success:
            raise ReplayError(i, result.detail or result.message)
    return doc


def replay(program: Sequence[ToolCall], geometry: GeometryConfig | None = None) -> CsgSolid:
    """按与在线 episode 相同的路径执行程序，返回最终实体。"""
    final = replay_document(program, geometry).final_solid()
    if final is None:
        raise ReplayError(len(program), "the program produced no solid")
    return final[1]


def reconstruct(
    program: Sequence[ToolCall],
    geometry: GeometryConfig | None = None,
) -> CsgSolid | None:
    """宽松回放：跳过失败的调用，用于评估生成结果。"""
    doc = DocumentState(geometry)
    for call in program:
        call_tool(doc, call)
    final = doc.final_solid()
    return final[1] if final else None


# ---------------------------------------------------------------------------
# gym
# ---------------------------------------------------------------------------


class CadGym:
    """episode 驱动：reset → step* → finalize。"""

    def __init__(
        self,
        geometry: GeometryConfig | None = None,
        gym: GymConfig | None = None,
    ) -> None:
        self.geometry = geometry or GeometryConfig()
        self.settings = gym or GymConfig()
        self._ground_truth: dict[str, CsgSolid] = {}

    @classmethod
    def from_config(cls, config: AppConfig) -> "CadGym":
        return cls(config.geometry, config.gym)

    def ground_truth(self, task: Task) -> CsgSolid:
        if task.id not in self._ground_truth:
            self._ground_truth[task.id] = replay(task.ground_truth_program, self.geometry)
        return self._ground_truth[task.id]

    def reset(self, task: Task | None) -> EpisodeState:
        instruction = task.instruction if task else ""
        return EpisodeState(
            task=task,
            document=DocumentState(self.geometry),
            prompt=render_episode_prompt(instruction),
        )

    def _call(self, state: EpisodeState, call: ToolCall) -> tuple[Observation, list[Segment]]:
        result = call_tool(state.document, call)
        obs = render_feedback(call.name, result, state.document)
        state.failure_streak = 0 if result.success else state.failure_streak + 1
        segments = [
            Segment(tag="tool_call", body=encode_tool_call(call)),
            Segment(tag="tool_response", body=response_body(ToolResponse.from_observation(obs))),
        ]
        return obs, segments

    def _check_limits(self, state: EpisodeState) -> None:
        if state.done:
            return
        if state.turn >= self.settings.max_turns:
            state.done, state.termination = True, "max_turns"
        elif state.failure_streak >= self.settings.max_failure_streak:
            state.done, state.termination = True, "failure_streak"

    def step(
        self,
        state: EpisodeState,
        agent_text: str | bytes,
    ) -> tuple[list[Observation], list[int], EpisodeState]:
        """解析一轮输出并依次执行工具调用；解析失败记为一次失败的伪调用。"""
        if state.done:
            raise EpisodeFinished("episode is already finished")
        state.turn += 1
        raw = agent_text.decode("utf-8", errors="replace") if isinstance(agent_text, bytes) else agent_text

        try:
            turn = parse_agent_output(raw)
        except AgentOutputError as e:
            obs = parse_failure(e.describe(), state.document)
            state.failure_streak += 1
            state.transcript.append(
                Segment(tag="tool_response", body=response_body(ToolResponse.from_observation(obs)))
            )
            state.turns.append(
                TurnRecord(raw_output=raw, observations=(obs,), step_rewards=(0,), parse_error=e.describe())
            )
            logger.debug("turn {}: {}", state.turn, e.describe())
            self._check_limits(state)
            return [obs], [0], state

        observations: list[Observation] = []
        if turn.think is not None:
            state.transcript.append(Segment(tag="think", body=turn.think))
        for call in turn.tool_calls:
            obs, segments = self._call(state, call)
            observations.append(obs)
            state.transcript += segments
        if turn.answer is not None:
            state.transcript.append(Segment(tag="answer", body=turn.answer))
            state.final_answer = turn.completed
            state.done, state.termination = True, "answer"

        rewards = [step_reward(o) for o in observations]
        state.turns.append(
            TurnRecord(
                raw_output=raw,
                think=turn.think,
                tool_calls=turn.tool_calls,
                observations=tuple(observations),
                step_rewards=tuple(rewards),
                answer=turn.answer,
            )
        )
        self._check_limits(state)
        return observations, rewards, state

    def execute_call(self, state: EpisodeState, call: ToolCall) -> Observation:
        """不经过文本解析直接执行一次调用（JSON-RPC 会话使用）。"""
        if state.done:
            raise EpisodeFinished("episode is already finished")
        state.turn += 1
        obs, segments = self._call(state, call)
        state.transcript += segments
        state.turns.append(
            TurnRecord(
                raw_output=encode_tool_call(call),
                tool_calls=(call,),
                observations=(obs,),
                step_rewards=(step_reward(obs),),
            )
        )
        self._check_limits(state)
        return obs

    def finalize(
        self,
        state: EpisodeState,
        judge: TrajectoryJudge,
        weights: RewardWeights,
        seed: int | None = None,
        corruptions: Sequence[str] = (),
    ) -> TrajectoryRecord:
        """结束 episode，计算三项奖励并生成轨迹记录。"""
        if not state.done:
            state.done, state.termination = True, "closed"
        task = state.task
        final = state.document.final_solid()
        text = render_transcript(state.transcript)

        if final is None or task is None:
            verdict = NO
        else:
            verdict = judge.judge(task.instruction, text, final[1], self.ground_truth(task))
        orm = orm_reward(verdict)
        steps = [r for t in state.turns for r in t.step_rewards]
        reward = aggregate_reward(orm, steps, format_reward(check_transcript(text)), weights)
        outcome = "success" if state.final_answer and orm == 1 else "fail"
        logger.info(
            "episode {} finished: outcome={} total={:.4f} turns={}",
            task.id if task else INTERACTIVE_TASK_ID,
            outcome,
            reward.total,
            state.turn,
        )
        return TrajectoryRecord(
            task_id=task.id if task else INTERACTIVE_TASK_ID,
            instruction=task.instruction if task else "",
            prompt=state.prompt,
            seed=seed,
            turns=tuple(state.turns),
            transcript=tuple(state.transcript),
            final_answer=state.final_answer,
            final_solid_name=final[0] if final else None,
            termination=state.termination or "closed",
            judge=verdict,
            weights=weights,
            reward=reward,
            outcome=outcome,
            corruptions=tuple(corruptions),
        )


def recompute_reward(record: TrajectoryRecord) -> RewardBreakdown:
    fmt = format_reward(check_transcript(render_transcript(record.transcript)))
    return aggregate_reward(orm_reward(record.judge), record.step_rewards, fmt, record.weights)


def trajectory_tokens(record: TrajectoryRecord) -> tuple[list[str], "np.ndarray"]:
    return segment_tokens(record.transcript)


def run_episode(
    gym: CadGym,
    task: Task,
    policy: "PolicyInterface",
    judge: TrajectoryJudge,
    weights: RewardWeights,
    seed: int | None = None,
) -> TrajectoryRecord:
    state = gym.reset(task)
    while not state.done:
        gym.step(state, policy.sample(state))
    applied = getattr(policy, "applied_corruptions", None)
    corruptions = applied(task) if callable(applied) else ()
    return gym.finalize(state, judge, weights, seed=seed, corruptions=corruptions)


def run_batch(
    gym: CadGym,
    tasks: Sequence[Task],
    make_policy: Callable[[int], "PolicyInterface"],
    judge: TrajectoryJudge,
    weights: RewardWeights,
    seeds: Sequence[int],
) -> list[TrajectoryRecord]:
    """对每个任务、每个种子各跑一次；输出顺序与输入顺序一致。"""
    return [
        run_episode(gym, task, make_policy(seed), judge, weights, seed=seed)
        for task in tasks
        for seed in seeds
    ]
