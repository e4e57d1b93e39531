from __future__ import annotations

"""脚本策略：把标准程序包装成 CAD-CoT 轮次输出，可按概率注入一次错误。

错误类型：
- drop-step：删掉一步调用
- perturb-parameter：改动一个数值参数
- swap-boolean：替换一次布尔运算类型
"""

import copy
import zlib
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

from .cot_format import COMPLETED, AgentTurn, serialize_turn
from .feedback import fmt_names
from .tool_library import (
    BOOLEAN_OPERATION,
    CREATE_COMPLEX_SKETCH,
    CREATE_SIMPLE_SKETCH,
    EXTRUDE_FACE,
    MULTIPLE_FUSE,
    SET_COORD_SYSTEM,
    ToolCall,
)

if TYPE_CHECKING:
    from .gym import EpisodeState, Task, TrajectoryRecord

DROP_STEP = "drop-step"
PERTURB_PARAMETER = "perturb-parameter"
SWAP_BOOLEAN = "swap-boolean"
CORRUPTION_KINDS = (DROP_STEP, PERTURB_PARAMETER, SWAP_BOOLEAN)

SWAPPED_OPERATION = {"fuse": "cut", "cut": "fuse", "common": "fuse"}

FINAL_THINK = "All parts are built and combined into FinalModel; the model is complete."
ANSWER_TURN = serialize_turn(AgentTurn(think=FINAL_THINK, answer=COMPLETED))


@dataclass(frozen=True)
class CorruptionSpec:
    kinds: tuple[str, ...] = ()
    rate: float = 0.0

    def __post_init__(self) -> None:
        unknown = set(self.kinds) - set(CORRUPTION_KINDS)
        if unknown:
            raise ValueError(f"unknown corruption kinds: {sorted(unknown)}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"corruption rate must be in [0, 1], got {self.rate}")

    @property
    def active(self) -> bool:
        return bool(self.kinds) and self.rate > 0


def describe_call(call: ToolCall) -> str:
    """为每一步生成 think 文本。"""
    a = call.arguments
    if call.name == SET_COORD_SYSTEM:
        return f"Set up coordinate system {a.get('name')} at {a.get('origin')} rotated by {a.get('rotation')}."
    if call.name in (CREATE_COMPLEX_SKETCH, CREATE_SIMPLE_SKETCH):
        return f"Draw the profile of sketch {a.get('sketch_name')} on {a.get('frame')}."
    if call.name == EXTRUDE_FACE:
        return f"Extrude {a.get('sketch_name')} by {a.get('depth')} to create {a.get('solid_name')}."
    if call.name == BOOLEAN_OPERATION:
        return (
            f"Combine {a.get('base_object_name')} and {a.get('tool_object_name')} "
            f"with {a.get('operation')} into {a.get('name')}."
        )
    if call.name == MULTIPLE_FUSE:
        return f"Fuse {fmt_names(a.get('object_names', []))} into {a.get('name')}."
    return f"Call {call.name}."


def render_step(call: ToolCall) -> str:
    return serialize_turn(AgentTurn(think=describe_call(call), tool_calls=(call,)))


def _numeric_paths(value: Any, path: tuple = ()) -> list[tuple]:
    if isinstance(value, bool) or isinstance(value, str):
        return []
    if isinstance(value, (int, float)):
        return [path]
    if isinstance(value, dict):
        return [p for k, v in value.items() for p in _numeric_paths(v, path + (k,))]
    if isinstance(value, list):
        return [p for i, v in enumerate(value) for p in _numeric_paths(v, path + (i,))]
    return []


def _perturb(arguments: dict, path: tuple) -> dict:
    out = copy.deepcopy(arguments)
    node = out
    for key in path[:-1]:
        node = node[key]
    value = node[path[-1]]
    node[path[-1]] = value * 1.5 if value else 5.0
    return out


def corrupt_program(
    program: Sequence[ToolCall],
    kind: str,
    rng: np.random.Generator,
) -> list[ToolCall] | None:
    """对程序施加一次指定类型的错误；不适用时返回 None。"""
    calls = list(program)
    if kind == DROP_STEP:
        if not calls:
            return None
        del calls[int(rng.integers(len(calls)))]
        return calls
    if kind == SWAP_BOOLEAN:
        targets = [i for i, c in enumerate(calls) if c.name == BOOLEAN_OPERATION]
        if not targets:
            return None
        i = targets[int(rng.integers(len(targets)))]
        args = dict(calls[i].arguments)
        args["operation"] = SWAPPED_OPERATION.get(args.get("operation"), "fuse")
        calls[i] = ToolCall(name=calls[i].name, arguments=args)
        return calls
    if kind == PERTURB_PARAMETER:
        targets = [(i, p) for i, c in enumerate(calls) for p in _numeric_paths(c.arguments)]
        if not targets:
            return None
        i, path = targets[int(rng.integers(len(targets)))]
        calls[i] = ToolCall(name=calls[i].name, arguments=_perturb(calls[i].arguments, path))
        return calls
    raise ValueError(f"unknown corruption kind: {kind}")


def task_rng(seed: int, task_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(task_id.encode("utf-8"))])


class ScriptedPolicy:
    """按标准程序逐步输出；corruption.rate 是单次运行被注入错误的概率。"""

    def __init__(self, seed: int = 0, corruption: CorruptionSpec | None = None) -> None:
        self.seed = seed
        self.corruption = corruption or CorruptionSpec()
        self._plans: dict[str, tuple[list[ToolCall], tuple[str, ...]]] = {}

    def plan(self, task: "Task") -> tuple[list[ToolCall], tuple[str, ...]]:
        if task.id not in self._plans:
            self._plans[task.id] = self._make_plan(task)
        return self._plans[task.id]

    def _make_plan(self, task: "Task") -> tuple[list[ToolCall], tuple[str, ...]]:
        program = list(task.ground_truth_program)
        corruption = self.corruption
        if not corruption.active:
            return program, ()
        rng = task_rng(self.seed, task.id)
        if rng.random() >= corruption.rate:
            return program, ()
        kinds = list(corruption.kinds)
        for k in rng.permutation(len(kinds)):
            corrupted = corrupt_program(program, kinds[int(k)], rng)
            if corrupted is not None:
                return corrupted, (kinds[int(k)],)
        return program, ()

    def applied_corruptions(self, task: "Task") -> tuple[str, ...]:
        return self.plan(task)[1]

    def sample(self, state: "EpisodeState") -> str:
        program, _ = self.plan(state.task)
        index = len(state.turns)
        return render_step(program[index]) if index < len(program) else ANSWER_TURN

    def logprobs(self, tokens: Sequence[str]) -> np.ndarray:
        # 确定性策略
        return np.zeros(len(tokens))


class ReplayPolicy:
    """逐轮重放已记录轨迹的原始输出。"""

    def __init__(self, record: "TrajectoryRecord") -> None:
        self.record = record

    def sample(self, state: "EpisodeState") -> str:
        index = len(state.turns)
        turns = self.record.turns
        return turns[index].raw_output if index < len(turns) else ANSWER_TURN

    def logprobs(self, tokens: Sequence[str]) -> np.ndarray:
        return np.zeros(len(tokens))

    def applied_corruptions(self, task: "Task") -> tuple[str, ...]:
        return self.record.corruptions
