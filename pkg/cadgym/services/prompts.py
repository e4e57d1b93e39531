from __future__ import annotations

"""提示词模板：agent 系统提示与结果判定（ORM）提示。"""

import json
from typing import TYPE_CHECKING, Sequence

from .cot_format import Segment
from .tool_library import tools_list

if TYPE_CHECKING:
    from .gym import TrajectoryRecord

SYSTEM_PROMPT_TEMPLATE = """\
You are a CAD modeling assistant. You build 3D models by calling modeling tools.

You may call one or more functions to assist with the user query.
You are provided with function signatures within <tools></tools> XML tags:
<tools>
{tools}
</tools>

Build every part of the model with the following steps:
1. Creating a coordinate system (freecad-set_coord_system).
2. Drawing a 2D sketch on it (freecad-create_complex_sketch or freecad-create_simple_sketch).
3. Extruding it into a 3D shape (freecad-extrude_face).
4. Combining the part with the others (freecad-boolean_operation or freecad-multiple_fuse).

Before every tool call, reason about the next step inside <think></think> tags.
For each function call, return a json object with function name and arguments within
<tool_call></tool_call> XML tags:
<tool_call>
{{"name": <function-name>, "arguments": <args-json-object>}}
</tool_call>
The environment answers each call inside <tool_response></tool_response> tags with a
"success" or "fail" label, a message and the list of solids in the document.

Name the finished model FinalModel. When the model is complete, respond with:
<answer>COMPLETED</answer>

REMEMBER:
- Sketch coordinates are local to the chosen coordinate system; extrusion goes along its local +Z axis.
- Every name must be unique. Operands of a Boolean operation are consumed and cannot be reused.
- If a tool call fails, read the message, fix the arguments and try again.
"""

ORM_PROMPT_TEMPLATE = """\
You are a CAD design reviewer. Decide whether the modeling actions below fully realize the
designer's intent.

### Designer Intent ###
{instruction}

### Actions/Observations ###
{history}

Does the final model satisfy the designer's intent? You must respond with YES or NO.
"""


def render_system_prompt(tools: Sequence[dict] | None = None) -> str:
    listing = "\n".join(
        json.dumps(t, ensure_ascii=False, sort_keys=True) for t in (tools or tools_list())
    )
    return SYSTEM_PROMPT_TEMPLATE.format(tools=listing)


def render_episode_prompt(instruction: str) -> str:
    return f"{render_system_prompt()}\n{instruction}"


def _history(segments: Sequence[Segment]) -> str:
    lines = []
    step = 0
    for s in segments:
        if s.tag == "tool_call":
            step += 1
            lines.append(f"Action {step}: {s.body.strip()}")
        elif s.tag == "tool_response":
            lines.append(f"Observation {step}: {s.body.strip()}")
        elif s.tag == "answer":
            lines.append(f"Final answer: {s.body.strip()}")
    return "\n".join(lines) if lines else "(no actions)"


def render_orm_prompt(instruction: str, trajectory: "TrajectoryRecord | Sequence[Segment]") -> str:
    segments = trajectory.transcript if hasattr(trajectory, "transcript") else trajectory
    return ORM_PROMPT_TEMPLATE.format(instruction=instruction, history=_history(segments))
