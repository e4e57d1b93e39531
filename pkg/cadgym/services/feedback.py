from __future__ import annotations

"""工具反馈：模板化的 success/fail 消息与几何对象列表。

消息模板是固定的英文句子，供 LLM 阅读；step reward 只看 label。
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Sequence

from pydantic import BaseModel, ConfigDict

if TYPE_CHECKING:
    from .cad_document import DocumentState

Label = Literal["success", "fail"]

COORD_SUCCESS = (
    "Successfully created coordinate system {name} with origin {origin} and rotation "
    "{rotation} (intrinsic Z-Y-X Euler angles in degrees); its local +Z axis points along {z_axis}."
)
COORD_FAIL = "Coordinate system creation failed: {detail}."
SKETCH_SUCCESS = "Successfully created sketch {sketch_name} and its sketch-derived face {face_name}."
SKETCH_GEOMETRY_FAIL = (
    "Sketch creation failed: {detail}. Please try creating each profile loop one by one."
)
SKETCH_FAIL = "Sketch creation failed: {detail}."
SKETCH_INTERNAL = "Sketch creation failed due to an internal error: {detail}"
EXTRUDE_SUCCESS = (
    "Successfully extruded the face of sketch {sketch_name} by {depth} along its local +Z axis, "
    "creating solid {solid_name}."
)
EXTRUDE_FAIL = "Extrusion of sketch {sketch_name} failed. Error: {detail}"
BOOLEAN_SUCCESS = "A new solid {name} was created by performing the Boolean operation {operation}."
BOOLEAN_FAIL = (
    "The Boolean operation {operation} between base object {base} and tool object {tool} "
    "failed. Error: {detail}"
)
MULTI_FUSE_SUCCESS = "A new solid {name} was created by fusing {names}."
MULTI_FUSE_FAIL = "The multiple fuse of {names} into {name} failed. Error: {detail}"
INTERNAL_FAIL = "{tool} failed due to an internal error: {detail}"
ARGUMENTS_FAIL = "Tool call {tool} failed: invalid arguments: {detail}"
PARSE_FAIL = "Tool call parsing failed: {detail}"
EPISODE_FINISHED = "Tool call {tool} failed: the episode has ended ({reason}); no further calls are executed."

# 标识符里不允许空格和冒号，这些片段不会出现在对象名中
_ERROR_MARKERS = ("Error: ", "failed: ", "failed due to an internal error")


def fmt_number(value: float) -> str:
    return f"{float(value):g}"


def fmt_vector(values: Sequence[float]) -> str:
    return "(" + ", ".join(fmt_number(v) for v in values) + ")"


def fmt_names(names: Sequence[str]) -> str:
    return "[" + ", ".join(names) + "]"


@dataclass(frozen=True)
class Action:
    description: str


@dataclass(frozen=True)
class InterfaceResult:
    """工具执行结果。

    detail 保存内核的原始错误文本（自发反馈），模板消息在 actions 里。
    """

    success: bool
    actions: tuple[Action, ...]
    detail: str | None = None

    def __post_init__(self) -> None:
        if not self.actions:
            raise ValueError("InterfaceResult 至少需要一个 action")
        if self.success and any(
            marker in a.description for a in self.actions for marker in _ERROR_MARKERS
        ):
            raise ValueError("成功结果中不能出现错误模板")

    @classmethod
    def ok(cls, message: str) -> "InterfaceResult":
        return cls(True, (Action(message),))

    @classmethod
    def fail(cls, message: str, detail: str | None = None) -> "InterfaceResult":
        return cls(False, (Action(message),), detail)

    @property
    def message(self) -> str:
        return " ".join(a.description for a in self.actions)


class ObjectEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    kind: Literal["solid"] = "solid"
    consumed: bool = False


class Observation(BaseModel):
    """一次工具调用的观测：label + 模板消息 + 执行后的对象列表。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tool: str
    label: Label
    message: str
    object_list: tuple[ObjectEntry, ...] = ()
    detail: str | None = None


def object_list(doc: "DocumentState") -> tuple[ObjectEntry, ...]:
    """按创建顺序列出实体，被布尔运算消耗的打上 consumed。"""
    return tuple(
        ObjectEntry(name=entry.name, consumed=entry.consumed)
        for entry in doc.entries()
        if entry.kind == "solid"
    )


def render_feedback(tool_name: str, result: InterfaceResult, doc: "DocumentState") -> Observation:
    return Observation(
        tool=tool_name,
        label="success" if result.success else "fail",
        message=result.message,
        object_list=object_list(doc),
        detail=result.detail,
    )


def parse_failure(detail: str, doc: "DocumentState") -> Observation:
    """解析失败的伪调用：同样是 fail 标签，step reward 为 0。"""
    return Observation(
        tool="parse_error",
        label="fail",
        message=PARSE_FAIL.format(detail=detail),
        object_list=object_list(doc),
        detail=detail,
    )


def episode_finished(tool_name: str, reason: str | None, doc: "DocumentState") -> Observation:
    detail = f"EpisodeFinished: {reason or 'closed'}"
    return Observation(
        tool=tool_name,
        label="fail",
        message=EPISODE_FINISHED.format(tool=tool_name, reason=reason or "closed"),
        object_list=object_list(doc),
        detail=detail,
    )
