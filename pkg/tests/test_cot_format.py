from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from cadgym.services.cot_format import (
    AgentOutputError,
    AgentTurn,
    EmptyTurn,
    ExclusiveViolation,
    MalformedToolJson,
    Segment,
    ToolResponse,
    UnbalancedTags,
    UnknownTool,
    check_transcript,
    parse_agent_output,
    parse_tool_response,
    parse_transcript,
    render_tool_response,
    render_transcript,
    response_body,
    scan_tags,
    segment_tokens,
    serialize_turn,
)
from cadgym.services.feedback import ObjectEntry
from cadgym.services.tool_library import EXTRUDE_FACE, SET_COORD_SYSTEM, ToolCall

FORMAT_DIR = Path(__file__).resolve().parent / "fixtures" / "format"
FORMAT_FIXTURES = sorted(FORMAT_DIR.glob("*.txt"))

CALL = json.dumps({"name": SET_COORD_SYSTEM, "arguments": {"name": "CS1", "origin": [0, 0, 0], "rotation": [0, 0, 0]}})


def _read(path: Path) -> str:
    return path.read_text(encoding="utf-8").removesuffix("\n")


# ---------------------------------------------------------------------------
# 解析
# ---------------------------------------------------------------------------


def test_parse_think_and_call():
    turn = parse_agent_output(f"<think>make a frame</think>\n<tool_call>{CALL}</tool_call>")
    assert turn.think == "make a frame"
    assert [c.name for c in turn.tool_calls] == [SET_COORD_SYSTEM]
    assert turn.tool_calls[0].arguments["origin"] == [0, 0, 0]
    assert turn.answer is None


def test_multiple_thinks_are_joined():
    turn = parse_agent_output("<think>a</think><think>b</think>")
    assert turn.think == "a\nb"


def test_answer_is_stripped():
    turn = parse_agent_output("<think>done</think><answer>\n COMPLETED \n</answer>")
    assert turn.answer == "COMPLETED"
    assert turn.completed


def test_string_encoded_arguments_are_accepted():
    body = json.dumps({"name": EXTRUDE_FACE, "arguments": json.dumps({"sketch_name": "S", "depth": 2, "solid_name": "X"})})
    (call,) = parse_agent_output(f"<tool_call>{body}</tool_call>").tool_calls
    assert call.arguments == {"sketch_name": "S", "depth": 2, "solid_name": "X"}


def test_agent_written_tool_response_is_ignored():
    turn = parse_agent_output("<think>x</think><tool_response>{}</tool_response>")
    assert turn == AgentTurn(think="x")


def test_text_outside_tags_is_ignored():
    turn = parse_agent_output("Okay!\n<think>plan</think>\nbye")
    assert turn.think == "plan"


@pytest.mark.parametrize(
    "text, error",
    [
        ("<think>a<tool_call>{}</tool_call></think>", UnbalancedTags),
        ("<think>never closed", UnbalancedTags),
        ("</answer>", UnbalancedTags),
        ("<tool_call>{not json</tool_call>", MalformedToolJson),
        ('<tool_call>{"arguments": {}}</tool_call>', MalformedToolJson),
        (f'<tool_call>{{"name": "{SET_COORD_SYSTEM}", "arguments": [1, 2]}}</tool_call>', MalformedToolJson),
        (f'<tool_call>{{"name": "{EXTRUDE_FACE}", "arguments": {{"depth": NaN}}}}</tool_call>', MalformedToolJson),
        (f'<tool_call>{{"name": "{EXTRUDE_FACE}", "arguments": {{"depth": -Infinity}}}}</tool_call>', MalformedToolJson),
        (f'<tool_call>{{"name": "{EXTRUDE_FACE}", "arguments": "{{\\"depth\\": NaN}}"}}</tool_call>', MalformedToolJson),
        ('<tool_call>{"name": "freecad-fillet", "arguments": {}}</tool_call>', UnknownTool),
        (f"<tool_call>{CALL}</tool_call><answer>COMPLETED</answer>", ExclusiveViolation),
        ("just some prose", EmptyTurn),
        ("", EmptyTurn),
    ],
)
def test_parse_errors(text, error):
    with pytest.raises(error):
        parse_agent_output(text)


def test_error_codes_are_class_names():
    with pytest.raises(AgentOutputError) as info:
        parse_agent_output("<think>")
    assert info.value.code == "UnbalancedTags"
    assert info.value.describe().startswith("UnbalancedTags: ")


def test_invalid_utf8_bytes_are_tolerated():
    turn = parse_agent_output(b"<think>\xff\xfe</think>")
    assert turn.think is not None


def test_fuzz_never_crashes():
    alphabet = [
        "<think>", "</think>", "<tool_call>", "</tool_call>", "<tool_response>", "</tool_response>",
        "<answer>", "</answer>", "{", "}", "[", "]", '"name"', '"arguments"', ":", ",",
        f'"{SET_COORD_SYSTEM}"', '"x"', "1", "COMPLETED", " ", "\n", "<", ">", "/", "\\", '"',
    ]
    rng = np.random.default_rng(0)
    picks = rng.integers(len(alphabet), size=(100_000, 24))
    lengths = rng.integers(0, 25, size=100_000)
    for row, n in zip(picks, lengths):
        text = "".join(alphabet[i] for i in row[:n])
        try:
            parse_agent_output(text)
        except AgentOutputError:
            pass
        check_transcript(text)


# ---------------------------------------------------------------------------
# 序列化
# ---------------------------------------------------------------------------


def test_serialize_then_parse_turn():
    turn = AgentTurn(
        think="extrude the plate",
        tool_calls=(ToolCall(name=EXTRUDE_FACE, arguments={"sketch_name": "S", "depth": 5, "solid_name": "P"}),),
    )
    assert parse_agent_output(serialize_turn(turn)) == turn


def test_tool_response_escapes_tag_characters():
    resp = ToolResponse(
        label="fail",
        message="Sketch creation failed: <think> is not a name.",
        object_list=(ObjectEntry(name="A", consumed=True),),
    )
    assert "<" not in response_body(resp)
    rendered = render_tool_response(resp)
    assert len(scan_tags(rendered)) == 2
    assert parse_tool_response(rendered) == resp


def test_segment_tokens_mask_environment_blocks():
    segments = [
        Segment(tag="think", body="a b"),
        Segment(tag="tool_response", body="c"),
        Segment(tag="answer", body="COMPLETED"),
    ]
    tokens, mask = segment_tokens(segments)
    assert tokens == [
        "<think>", "a", "b", "</think>",
        "<tool_response>", "c", "</tool_response>",
        "<answer>", "COMPLETED", "</answer>",
    ]
    assert mask.tolist() == [True] * 4 + [False] * 3 + [True] * 3


# ---------------------------------------------------------------------------
# 格式校验
# ---------------------------------------------------------------------------


def test_format_fixture_suite_is_large_enough():
    assert len(FORMAT_FIXTURES) >= 12


@pytest.mark.parametrize("path", FORMAT_FIXTURES, ids=lambda p: p.stem)
def test_format_fixture_verdicts(path: Path):
    verdict = check_transcript(_read(path))
    assert verdict.ok == path.stem.startswith("pass"), verdict.violations
    assert verdict.ok == (not verdict.violations)


@pytest.mark.parametrize(
    "stem, kind",
    [
        ("fail_01_missing_think", "missing tag"),
        ("fail_02_missing_answer", "missing tag"),
        ("fail_03_missing_response", "missing tag"),
        ("fail_03_missing_response", "structure"),
        ("fail_04_shuffled", "order"),
        ("fail_05_nested", "order"),
        ("fail_06_unclosed_think", "order"),
        ("fail_07_block_after_answer", "order"),
        ("fail_08_call_without_think", "structure"),
        ("fail_09_answer_with_call", "structure"),
        ("fail_10_stray_closing", "order"),
        ("fail_11_wrong_case", "missing tag"),
    ],
)
def test_format_violation_kinds(stem, kind):
    assert kind in check_transcript(_read(FORMAT_DIR / f"{stem}.txt")).kinds


@pytest.mark.parametrize(
    "stem",
    [
        "pass_01_single_call",
        "pass_02_two_calls_one_turn",
        "pass_04_two_turns",
        "pass_05_answer_without_final_think",
        "pass_06_multiline_think",
        "fail_01_missing_think",
        "fail_04_shuffled",
        "fail_08_call_without_think",
    ],
)
def test_transcript_round_trip(stem):
    text = _read(FORMAT_DIR / f"{stem}.txt")
    assert render_transcript(parse_transcript(text)) == text
