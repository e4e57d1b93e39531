from __future__ import annotations

import math
from pathlib import Path

import pytest
from pydantic import ValidationError

from cadgym.services.cad_document import DocumentState
from cadgym.services.cot_format import check_transcript
from cadgym.services.feedback import parse_failure, render_feedback
from cadgym.services.geo_metrics import iou
from cadgym.services.geometry_kernel import Node
from cadgym.services.reward import (
    NO,
    YES,
    GeometricJudge,
    JudgeVerdict,
    RewardWeights,
    TrajectoryJudge,
    aggregate_reward,
    format_reward,
    orm_reward,
    reference_judge,
    step_mean,
    step_reward,
)
from cadgym.services.tool_library import (
    BOOLEAN_OPERATION,
    CREATE_COMPLEX_SKETCH,
    CREATE_SIMPLE_SKETCH,
    EXTRUDE_FACE,
    MULTIPLE_FUSE,
    SET_COORD_SYSTEM,
    ToolCall,
    call_tool,
)
from shapes import box

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _rect(x0, y0, x1, y1):
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    return [{"type": "line", "start": list(a), "end": list(b)} for a, b in zip(corners, corners[1:] + corners[:1])]


def _setup() -> DocumentState:
    """CS1 上三个方块：A、B 重叠且已被融合为 AB，C 独立。"""
    doc = DocumentState()
    program = [
        ToolCall(name=SET_COORD_SYSTEM, arguments={"name": "CS1", "origin": [0, 0, 0], "rotation": [0, 0, 0]}),
        ToolCall(name=CREATE_COMPLEX_SKETCH, arguments={"sketch_name": "SkA", "frame": "CS1", "elements": _rect(0, 0, 10, 10)}),
        ToolCall(name=EXTRUDE_FACE, arguments={"sketch_name": "SkA", "depth": 5, "solid_name": "A"}),
        ToolCall(name=CREATE_COMPLEX_SKETCH, arguments={"sketch_name": "SkB", "frame": "CS1", "elements": _rect(5, 5, 15, 15)}),
        ToolCall(name=EXTRUDE_FACE, arguments={"sketch_name": "SkB", "depth": 5, "solid_name": "B"}),
        ToolCall(name=CREATE_COMPLEX_SKETCH, arguments={"sketch_name": "SkC", "frame": "CS1", "elements": _rect(20, 20, 30, 30)}),
        ToolCall(name=EXTRUDE_FACE, arguments={"sketch_name": "SkC", "depth": 5, "solid_name": "C"}),
        ToolCall(name=BOOLEAN_OPERATION, arguments={"base_object_name": "A", "tool_object_name": "B", "operation": "fuse", "name": "AB"}),
    ]
    for call in program:
        assert call_tool(doc, call).success
    return doc


BOWTIE = [
    {"type": "line", "start": [0, 0], "end": [1, 1]},
    {"type": "line", "start": [1, 1], "end": [1, 0]},
    {"type": "line", "start": [1, 0], "end": [0, 1]},
    {"type": "line", "start": [0, 1], "end": [0, 0]},
]


@pytest.mark.parametrize(
    "code, name, arguments",
    [
        ("DuplicateName", SET_COORD_SYSTEM, {"name": "CS1", "origin": [1, 0, 0], "rotation": [0, 0, 0]}),
        ("UnknownFrame", CREATE_SIMPLE_SKETCH, {"sketch_name": "Sk", "frame": "NoCS", "element": {"type": "circle", "center": [0, 0], "radius": 1}}),
        ("UnknownSketch", EXTRUDE_FACE, {"sketch_name": "NoSk", "depth": 1, "solid_name": "X"}),
        ("UnknownObject", BOOLEAN_OPERATION, {"base_object_name": "C", "tool_object_name": "Ghost", "operation": "cut", "name": "X"}),
        ("OperandConsumed", BOOLEAN_OPERATION, {"base_object_name": "A", "tool_object_name": "C", "operation": "fuse", "name": "X"}),
        ("FewerThanTwoOperands", MULTIPLE_FUSE, {"object_names": ["C"], "name": "X"}),
        ("UnsupportedElement", CREATE_SIMPLE_SKETCH, {"sketch_name": "Sk", "frame": "CS1", "element": {"type": "spline", "points": [[0, 0], [1, 1], [2, 0]]}}),
        ("InvalidParameter", CREATE_SIMPLE_SKETCH, {"sketch_name": "Sk", "frame": "CS1", "element": {"type": "circle", "center": [0, 0], "radius": -1}}),
        ("NonFiniteInput", SET_COORD_SYSTEM, {"name": "CS9", "origin": [math.nan, 0, 0], "rotation": [0, 0, 0]}),
        ("NonPositiveDepth", EXTRUDE_FACE, {"sketch_name": "SkC", "depth": 0, "solid_name": "X"}),
        ("OpenLoop", CREATE_COMPLEX_SKETCH, {"sketch_name": "Sk", "frame": "CS1", "elements": _rect(0, 0, 1, 1)[:3]}),
        ("SelfIntersection", CREATE_COMPLEX_SKETCH, {"sketch_name": "Sk", "frame": "CS1", "elements": BOWTIE}),
        ("EmptyResult", BOOLEAN_OPERATION, {"base_object_name": "C", "tool_object_name": "AB", "operation": "common", "name": "X"}),
        ("InvalidToolArguments", EXTRUDE_FACE, {"sketch_name": "SkC"}),
    ],
)
def test_every_failure_kind_earns_zero(code, name, arguments):
    doc = _setup()
    obs = render_feedback(name, call_tool(doc, ToolCall(name=name, arguments=arguments)), doc)
    assert obs.label == "fail"
    assert obs.detail.startswith(f"{code}:"), obs.detail
    assert step_reward(obs) == 0


def test_success_earns_one():
    doc = _setup()
    call = ToolCall(name=MULTIPLE_FUSE, arguments={"object_names": ["AB", "C"], "name": "FinalModel"})
    obs = render_feedback(MULTIPLE_FUSE, call_tool(doc, call), doc)
    assert step_reward(obs) == 1


def test_parse_failure_earns_zero():
    assert step_reward(parse_failure("EmptyTurn: no tag", DocumentState())) == 0


def test_step_mean():
    assert step_mean([1, 0, 1, 1]) == 0.75
    assert step_mean([]) == 0.0


def test_format_reward():
    transcript = (FIXTURES / "format" / "pass_01_single_call.txt").read_text(encoding="utf-8")
    assert format_reward(check_transcript(transcript)) == 1
    # 四种标签缺一不可
    assert format_reward(check_transcript("<think>a</think><answer>COMPLETED</answer>")) == 0
    assert format_reward(check_transcript("<answer>COMPLETED</answer>")) == 0


def test_orm_tie_is_no():
    assert orm_reward(YES) == 1
    assert orm_reward(NO) == 0
    assert orm_reward(JudgeVerdict(yes_prob=0.5, no_prob=0.5)) == 0
    assert orm_reward(JudgeVerdict(yes_prob=0.51, no_prob=0.49)) == 1


def test_aggregate_all_success():
    total = aggregate_reward(1, [1, 1, 1], 1, RewardWeights())
    assert total.step_mean == 1.0
    assert total.total == pytest.approx(2.0)


def test_aggregate_weights():
    weights = RewardWeights(alpha=2.0, beta=1.0, gamma=0.0)
    assert aggregate_reward(0, [1, 0], 1, weights).total == pytest.approx(0.5)


def test_weights_must_not_all_be_zero():
    with pytest.raises(ValidationError):
        RewardWeights(alpha=0, beta=0, gamma=0)
    with pytest.raises(ValidationError):
        RewardWeights(alpha=-1)


def test_reference_judge():
    cube = box((0, 0, 0), (2, 1, 1), "A")
    shifted = box((1, 0, 0), (3, 1, 1), "B")
    assert reference_judge(cube, cube, resolution=24) == YES
    assert reference_judge(cube, shifted, resolution=24) == NO
    assert reference_judge(None, cube) == NO
    assert reference_judge(Node("common", cube, box((5, 5, 5), (6, 6, 6))), cube) == NO


def test_geometric_judge_is_a_trajectory_judge(judge):
    assert isinstance(judge, TrajectoryJudge)
    cube = box((0, 0, 0), (1, 1, 1))
    assert judge.judge("make a cube", "", cube, cube) == YES
    assert GeometricJudge(0.95, 16).judge("", "", None, cube) == NO


@pytest.mark.parametrize("scale", [0.5, 2.0, 3.0])
def test_total_scales_linearly_with_weights(scale):
    weights = RewardWeights(alpha=1.0, beta=0.7, gamma=0.3)
    scaled = RewardWeights(alpha=scale, beta=0.7 * scale, gamma=0.3 * scale)
    for orm, steps, fmt in [(1, [1, 0, 1], 1), (0, [0, 0], 1), (1, [1], 0)]:
        base = aggregate_reward(orm, steps, fmt, weights).total
        assert aggregate_reward(orm, steps, fmt, scaled).total == pytest.approx(scale * base)


def test_orm_of_reference_judge_is_monotone_in_iou():
    gt = box((0, 0, 0), (2, 2, 2), "GT")
    shifts = [0.0, 0.02, 0.05, 0.2, 0.6, 1.5]
    candidates = [box((s, 0, 0), (2 + s, 2, 2), f"C{i}") for i, s in enumerate(shifts)]
    ious = [iou(c, gt, 24) for c in candidates]
    orms = [orm_reward(reference_judge(c, gt, resolution=24)) for c in candidates]
    assert all(b <= a for a, b in zip(ious, ious[1:]))
    assert all(b <= a for a, b in zip(orms, orms[1:]))
    assert orms[0] == 1 and orms[-1] == 0
