from __future__ import annotations

"""CAD-CoT 标签语法：解析 agent 输出、序列化转录、校验格式。

标签固定为 <think> <tool_call> <tool_response> <answer>，区分大小写，不允许嵌套。
标签外的文字保留在原始转录中，但语义上忽略。
"""

import json
import re
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .feedback import Label, ObjectEntry, Observation
from .tool_library import TOOL_NAMES, ToolCall

Tag = Literal["think", "tool_call", "tool_response", "answer"]
TAGS: tuple[Tag, ...] = ("think", "tool_call", "tool_response", "answer")
COMPLETED = "COMPLETED"

_TAG_RE = re.compile(r"<(/?)(think|tool_call|tool_response|answer)>")


class AgentOutputError(RuntimeError):
    """agent 输出无法解析。"""

    @property
    def code(self) -> str:
        return type(self).__name__

    def describe(self) -> str:
        return f"{self.code}: {self}"


class UnbalancedTags(AgentOutputError):
    pass


class MalformedToolJson(AgentOutputError):
    pass


class UnknownTool(AgentOutputError):
    pass


class ExclusiveViolation(AgentOutputError):
    """同一轮里同时出现 answer 与 tool_call。"""


class EmptyTurn(AgentOutputError):
    pass


@dataclass(frozen=True)
class TagMark:
    tag: Tag
    closing: bool
    start: int
    end: int


class Segment(BaseModel):
    """转录中的一个标签块；body 原样保存。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tag: Tag
    body: str


class AgentTurn(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    think: str | None = None
    tool_calls: tuple[ToolCall, ...] = ()
    answer: str | None = None

    @model_validator(mode="after")
    def _check(self) -> "AgentTurn":
        if self.think is None and not self.tool_calls and self.answer is None:
            raise ValueError("AgentTurn 至少需要 think、tool_call 或 answer 之一")
        if self.answer is not None and self.tool_calls:
            raise ValueError("answer 与 tool_call 不能出现在同一轮")
        return self

    @property
    def completed(self) -> bool:
        return self.answer == COMPLETED


class ToolResponse(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    label: Label
    message: str
    object_list: tuple[ObjectEntry, ...] = ()

    @classmethod
    def from_observation(cls, obs: Observation) -> "ToolResponse":
        return cls(label=obs.label, message=obs.message, object_list=obs.object_list)


# ---------------------------------------------------------------------------
# 扫描与切块
# ---------------------------------------------------------------------------


def scan_tags(text: str) -> list[TagMark]:
    return [
        TagMark(tag=m.group(2), closing=bool(m.group(1)), start=m.start(), end=m.end())  # type: ignore[arg-type]
        for m in _TAG_RE.finditer(text)
    ]


def split_segments(text: str) -> list[Segment]:
    """把文本切成完整的标签块；嵌套、未闭合或多余的闭合标签抛 UnbalancedTags。"""
    segments: list[Segment] = []
    opened: TagMark | None = None
    for mark in scan_tags(text):
        if not mark.closing:
            if opened is not None:
                raise UnbalancedTags(f"<{mark.tag}> opened inside <{opened.tag}> at offset {mark.start}")
            opened = mark
        elif opened is None or opened.tag != mark.tag:
            raise UnbalancedTags(f"</{mark.tag}> at offset {mark.start} has no matching opening tag")
        else:
            segments.append(Segment(tag=mark.tag, body=text[opened.end:mark.start]))
            opened = None
    if opened is not None:
        raise UnbalancedTags(f"<{opened.tag}> at offset {opened.start} is never closed")
    return segments


def _reject_constant(name: str) -> float:
    raise ValueError(f"non-finite number {name} is not allowed")


def decode_tool_call(body: str) -> ToolCall:
    try:
        data = json.loads(body, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as e:
        raise MalformedToolJson(f"tool_call body is not valid JSON: {e}") from None
    if not isinstance(data, dict) or not isinstance(data.get("name"), str):
        raise MalformedToolJson('tool_call body must be an object with a string "name"')
    arguments = data.get("arguments", {})
    if isinstance(arguments, str):
        # 有些模型把 arguments 再编码成字符串
        try:
            arguments = json.loads(arguments, parse_constant=_reject_constant)
        except (ValueError, RecursionError):
            pass
    if not isinstance(arguments, dict):
        raise MalformedToolJson('tool_call "arguments" must be an object')
    if data["name"] not in TOOL_NAMES:
        raise UnknownTool(f"unknown tool {data['name']}")
    return ToolCall(name=data["name"], arguments=arguments)


def parse_agent_output(text: str | bytes) -> AgentTurn:
    """解析一轮 agent 输出。

    - 多个 think 块按换行拼接
    - agent 自己写的 tool_response 块被忽略
    - answer 去掉首尾空白
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    segments = split_segments(text)

    thinks = [s.body for s in segments if s.tag == "think"]
    calls = [decode_tool_call(s.body) for s in segments if s.tag == "tool_call"]
    answers = [s.body.strip() for s in segments if s.tag == "answer"]

    if answers and calls:
        raise ExclusiveViolation("a turn cannot contain both <answer> and <tool_call>")
    if not thinks and not calls and not answers:
        raise EmptyTurn("no <think>, <tool_call> or <answer> block found")
    return AgentTurn(
        think="\n".join(thinks) if thinks else None,
        tool_calls=tuple(calls),
        answer=answers[-1] if answers else None,
    )


def encode_tool_call(call: ToolCall) -> str:
    return json.dumps({"name": call.name, "arguments": call.arguments}, ensure_ascii=False)


def turn_segments(turn: AgentTurn) -> list[Segment]:
    segments = []
    if turn.think is not None:
        segments.append(Segment(tag="think", body=turn.think))
    segments += [Segment(tag="tool_call", body=encode_tool_call(c)) for c in turn.tool_calls]
    if turn.answer is not None:
        segments.append(Segment(tag="answer", body=turn.answer))
    return segments


def serialize_turn(turn: AgentTurn) -> str:
    return render_transcript(turn_segments(turn))


def render_segment(segment: Segment) -> str:
    return f"<{segment.tag}>{segment.body}</{segment.tag}>"


def render_transcript(segments: Sequence[Segment]) -> str:
    return "\n".join(render_segment(s) for s in segments)


def parse_transcript(text: str) -> list[Segment]:
    return split_segments(text)


# ---------------------------------------------------------------------------
# tool_response
# ---------------------------------------------------------------------------


def response_body(resp: ToolResponse) -> str:
    # "<" 转义，避免消息内容伪造标签
    return json.dumps(resp.model_dump(mode="json"), ensure_ascii=False, sort_keys=True).replace(
        "<", "\\u003c"
    )


def render_tool_response(resp: ToolResponse) -> str:
    return render_segment(Segment(tag="tool_response", body=response_body(resp)))


def parse_tool_response(text: str) -> ToolResponse:
    segments = [s for s in split_segments(text) if s.tag == "tool_response"]
    if len(segments) != 1:
        raise UnbalancedTags(f"expected exactly one <tool_response> block, found {len(segments)}")
    return ToolResponse.model_validate_json(segments[0].body)


# ---------------------------------------------------------------------------
# 格式校验
# ---------------------------------------------------------------------------

ViolationKind = Literal["missing tag", "order", "structure"]


class FormatViolation(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ViolationKind
    detail: str


class FormatVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    ok: bool
    violations: tuple[FormatViolation, ...] = ()

    @property
    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def _blocks(marks: Sequence[TagMark], violations: list[FormatViolation]) -> list[Tag]:
    blocks: list[Tag] = []
    opened: Tag | None = None
    for mark in marks:
        if not mark.closing:
            if opened is not None:
                violations.append(FormatViolation(kind="order", detail=f"<{mark.tag}> opened inside <{opened}>"))
                continue
            opened = mark.tag
        elif opened != mark.tag:
            violations.append(FormatViolation(kind="order", detail=f"</{mark.tag}> without a matching <{mark.tag}>"))
        else:
            blocks.append(mark.tag)
            opened = None
    if opened is not None:
        violations.append(FormatViolation(kind="order", detail=f"<{opened}> is never closed"))
    return blocks


def _turns(blocks: Sequence[Tag]) -> list[list[Tag]]:
    """tool_response 之后出现的第一个非 response 块开启新的一轮。"""
    turns: list[list[Tag]] = []
    current: list[Tag] = []
    for tag in blocks:
        if current and current[-1] == "tool_response" and tag != "tool_response":
            turns.append(current)
            current = []
        current.append(tag)
    if current:
        turns.append(current)
    return turns


def validate_format(marks: Sequence[TagMark]) -> FormatVerdict:
    """格式奖励的判定条件：

    1. 四种标签全部出现
    2. 开闭顺序正确、无嵌套
    3. 每个 tool_call 在本轮内有前置 think，并且后面跟着对应的 tool_response
    另外 answer 必须是最后一个块，且不能与 tool_call 同轮。
    """
    violations: list[FormatViolation] = []
    blocks = _blocks(marks, violations)

    present = set(blocks)
    for tag in TAGS:
        if tag not in present:
            violations.append(FormatViolation(kind="missing tag", detail=f"no <{tag}> block"))

    for n, turn in enumerate(_turns(blocks), start=1):
        seen_think = False
        calls = responses = 0
        for tag in turn:
            if tag == "think":
                seen_think = True
            elif tag == "tool_call":
                if not seen_think:
                    violations.append(
                        FormatViolation(kind="structure", detail=f"turn {n}: <tool_call> without a preceding <think>")
                    )
                calls += 1
            elif tag == "tool_response":
                if responses >= calls:
                    violations.append(
                        FormatViolation(kind="order", detail=f"turn {n}: <tool_response> before its <tool_call>")
                    )
                else:
                    responses += 1
            elif calls:
                violations.append(
                    FormatViolation(kind="structure", detail=f"turn {n}: <answer> shares a turn with <tool_call>")
                )
        if responses < calls:
            violations.append(
                FormatViolation(
                    kind="structure",
                    detail=f"turn {n}: {calls - responses} <tool_call> without a <tool_response>",
                )
            )

    if "answer" in present and blocks[-1] != "answer":
        violations.append(FormatViolation(kind="order", detail="blocks follow <answer>"))

    return FormatVerdict(ok=not violations, violations=tuple(violations))


def check_transcript(text: str) -> FormatVerdict:
    return validate_format(scan_tags(text))


def segment_tokens(segments: Sequence[Segment]) -> tuple[list[str], np.ndarray]:
    """按空白切分的 token 序列与动作掩码（agent 生成的块为 True）。"""
    tokens: list[str] = []
    mask: list[bool] = []
    for s in segments:
        piece = [f"<{s.tag}>", *s.body.split(), f"</{s.tag}>"]
        tokens += piece
        mask += [s.tag != "tool_response"] * len(piece)
    return tokens, np.asarray(mask, dtype=bool)
