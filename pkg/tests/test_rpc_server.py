from __future__ import annotations

import io
import json
from pathlib import Path

import pytest

from cadgym.config import GymConfig
from cadgym.services.gym import CadGym
from cadgym.services.reward import YES
from cadgym.services.rpc_server import (
    INVALID_PARAMS,
    INVALID_REQUEST,
    METHOD_NOT_FOUND,
    PARSE_ERROR,
    RpcSession,
    encode_message,
    handle_message,
    serve,
)
from cadgym.services.tool_library import EXTRUDE_FACE, SET_COORD_SYSTEM

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _request(method: str, params=None, id_=1) -> str:
    message = {"jsonrpc": "2.0", "id": id_, "method": method}
    if params is not None:
        message["params"] = params
    return json.dumps(message)


@pytest.fixture
def session(gym, judge, weights):
    return RpcSession(gym, None, judge, weights)


def test_tools_list_matches_golden(session):
    response = handle_message(session, _request("tools/list"))
    assert response["id"] == 1
    assert response["result"]["tools"] == json.loads((FIXTURES / "tools_list.json").read_text(encoding="utf-8"))


def test_tools_call_success(session):
    params = {"name": SET_COORD_SYSTEM, "arguments": {"name": "CS1", "origin": [0, 0, 0], "rotation": [0, 0, 0]}}
    result = handle_message(session, _request("tools/call", params, id_="a"))["result"]
    assert result["label"] == "success"
    assert result["isError"] is False
    assert result["content"][0]["text"].startswith("<tool_response>")
    assert session.state.turns[0].step_rewards == (1,)


def test_tool_failure_is_a_result_not_an_error(session):
    params = {"name": EXTRUDE_FACE, "arguments": {"sketch_name": "Ghost", "depth": 1, "solid_name": "X"}}
    response = handle_message(session, _request("tools/call", params))
    assert "error" not in response
    assert response["result"]["label"] == "fail"
    assert response["result"]["isError"] is True
    assert "UnknownSketch" in response["result"]["message"]


@pytest.mark.parametrize(
    "line, code",
    [
        ("{not json", PARSE_ERROR),
        ('{"jsonrpc": "2.0", "id": 1, "method": "tools/call", "params": {"arguments": {"depth": NaN}}}', PARSE_ERROR),
        ("[1, 2]", INVALID_REQUEST),
        ('{"jsonrpc": "1.0", "id": 1, "method": "tools/list"}', INVALID_REQUEST),
        ('{"id": 1, "method": "tools/list"}', INVALID_REQUEST),
        (_request("resources/list"), METHOD_NOT_FOUND),
        (_request("tools/call", {"name": "freecad-fillet", "arguments": {}}), INVALID_PARAMS),
        (_request("tools/call", {"name": EXTRUDE_FACE, "arguments": {"depth": "x"}}), INVALID_PARAMS),
        (_request("tools/call", {"arguments": {}}), INVALID_PARAMS),
    ],
)
def test_error_codes(session, line, code):
    response = handle_message(session, line)
    assert response["error"]["code"] == code
    assert session.state.turns == []


def test_error_keeps_request_id(session):
    assert handle_message(session, _request("nope", id_=42))["id"] == 42
    assert handle_message(session, "{not json")["id"] is None


def test_notifications_get_no_reply(session):
    notification = json.dumps({"jsonrpc": "2.0", "method": "tools/list"})
    assert handle_message(session, notification) is None
    assert handle_message(session, json.dumps({"jsonrpc": "2.0", "method": "unknown"})) is None


def test_encode_message_is_one_line():
    text = encode_message({"jsonrpc": "2.0", "id": 1, "result": {"message": "a\nb"}})
    assert text.endswith("\n") and text.count("\n") == 1


def test_golden_session_over_streams(gym, golden_task, judge, weights):
    closed = []
    session = RpcSession(gym, golden_task, judge, weights, on_close=closed.append)
    lines = [_request("tools/list", id_=0)]
    lines += [
        _request("tools/call", {"name": c.name, "arguments": c.arguments}, id_=i)
        for i, c in enumerate(golden_task.ground_truth_program, start=1)
    ]
    lines.insert(2, json.dumps({"jsonrpc": "2.0", "method": "tools/list"}))
    lines.insert(3, "")
    out = io.StringIO()
    record = serve(io.StringIO("\n".join(lines) + "\n"), out, session)

    responses = [json.loads(line) for line in out.getvalue().splitlines()]
    assert [r["id"] for r in responses] == list(range(len(golden_task.ground_truth_program) + 1))
    assert all(r["result"]["label"] == "success" for r in responses[1:])
    assert closed == [record]
    assert record.final_solid_name == "FinalModel"
    assert record.judge == YES
    assert record.reward.orm == 1
    assert record.step_rewards == [1] * len(golden_task.ground_truth_program)
    # 会话没有 COMPLETED 回答
    assert not record.final_answer
    assert session.close() is record


def test_failure_streak_ends_the_session(gym, judge, weights):
    session = RpcSession(gym, None, judge, weights)
    params = {"name": EXTRUDE_FACE, "arguments": {"sketch_name": "Ghost", "depth": 1, "solid_name": "X"}}
    responses = [handle_message(session, _request("tools/call", params, id_=i)) for i in range(60)]
    limit = gym.settings.max_failure_streak

    assert len(session.state.turns) == limit
    assert session.state.termination == "failure_streak"
    assert [r["id"] for r in responses] == list(range(60))
    late = responses[limit]["result"]
    assert late["label"] == "fail" and late["isError"] is True
    assert "the episode has ended (failure_streak)" in late["message"]
    record = session.close()
    assert record.termination == "failure_streak"
    assert record.step_rewards == [0] * limit


def test_session_stops_at_max_turns(gym, golden_task, judge, weights):
    short = CadGym(gym.geometry, GymConfig(max_turns=3))
    session = RpcSession(short, golden_task, judge, weights)
    for i, c in enumerate(golden_task.ground_truth_program):
        handle_message(session, _request("tools/call", {"name": c.name, "arguments": c.arguments}, id_=i))
    record = session.close()
    assert len(record.turns) == 3
    assert record.termination == "max_turns"
    assert record.step_rewards == [1, 1, 1]
