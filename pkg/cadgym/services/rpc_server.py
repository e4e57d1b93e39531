from __future__ import annotations

"""工具服务：标准流上的逐行 JSON-RPC 2.0（tools/list、tools/call）。

每行一个 envelope；没有 id 的通知不回复。流关闭时结束会话并写出轨迹记录。
"""

import io
import json
from typing import IO, Any, Callable

from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError

from .cot_format import ToolResponse, render_tool_response
from .feedback import episode_finished
from .gym import CadGym, Task, TrajectoryRecord
from .reward import GeometricJudge, RewardWeights, TrajectoryJudge
from .tool_library import TOOL_NAMES, InvalidToolArguments, ToolCall, decode_arguments, tools_list

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602


class RpcRequest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    jsonrpc: str
    method: str
    id: int | str | None = None
    params: dict[str, Any] | None = None

    @property
    def is_notification(self) -> bool:
        return "id" not in self.model_fields_set


class CallParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    arguments: dict[str, Any] = {}


class RpcSession:
    """一个流对应一个 episode。"""

    def __init__(
        self,
        gym: CadGym,
        task: Task | None = None,
        judge: TrajectoryJudge | None = None,
        weights: RewardWeights | None = None,
        on_close: Callable[[TrajectoryRecord], None] | None = None,
    ) -> None:
        self.gym = gym
        self.state = gym.reset(task)
        self.judge = judge or GeometricJudge()
        self.weights = weights or RewardWeights()
        self.on_close = on_close
        self.record: TrajectoryRecord | None = None

    def call(self, call: ToolCall) -> ToolResponse:
        """episode 达到轮数或连续失败上限后，后续调用不执行、不记入轨迹，直接回 fail。"""
        if self.state.done:
            obs = episode_finished(call.name, self.state.termination, self.state.document)
            logger.debug("rejecting {}: episode finished ({})", call.name, self.state.termination)
            return ToolResponse.from_observation(obs)
        return ToolResponse.from_observation(self.gym.execute_call(self.state, call))

    def close(self) -> TrajectoryRecord:
        if self.record is None:
            self.record = self.gym.finalize(self.state, self.judge, self.weights)
            if self.on_close:
                self.on_close(self.record)
        return self.record


def _reject_constant(name: str) -> float:
    raise ValueError(f"{name} is not valid JSON")


def _error(id_: Any, code: int, message: str) -> dict[str, Any]:
    return {"jsonrpc": "2.0", "id": id_, "error": {"code": code, "message": message}}


def _result(id_: Any, result: dict[str, Any]) -> dict[str, Any]:
    return {"jsonrpc": "2.0", "id": id_, "result": result}


def _tools_call(session: RpcSession, params: dict[str, Any] | None) -> dict[str, Any]:
    try:
        p = CallParams.model_validate(params or {})
    except ValidationError as e:
        raise InvalidToolArguments(f"tools/call params must be {{name, arguments}}: {e.error_count()} error(s)") from e
    if p.name not in TOOL_NAMES:
        raise InvalidToolArguments(f"unknown tool {p.name}")
    decode_arguments(p.name, p.arguments)
    resp = session.call(ToolCall(name=p.name, arguments=p.arguments))
    return {
        **resp.model_dump(mode="json"),
        "content": [{"type": "text", "text": render_tool_response(resp)}],
        "isError": resp.label == "fail",
    }


def handle_message(session: RpcSession, line: str) -> dict[str, Any] | None:
    """处理一行请求，返回响应 envelope；通知返回 None。"""
    try:
        raw = json.loads(line, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as e:
        return _error(None, PARSE_ERROR, f"Parse error: {e}")
    id_ = raw.get("id") if isinstance(raw, dict) and isinstance(raw.get("id"), (int, str)) else None
    try:
        req = RpcRequest.model_validate(raw)
        if req.jsonrpc != "2.0":
            raise ValueError("jsonrpc must be '2.0'")
    except (ValidationError, ValueError) as e:
        return _error(id_, INVALID_REQUEST, f"Invalid Request: {e}")

    if req.method == "tools/list":
        response = _result(req.id, {"tools": tools_list()})
    elif req.method == "tools/call":
        try:
            response = _result(req.id, _tools_call(session, req.params))
        except InvalidToolArguments as e:
            response = _error(req.id, INVALID_PARAMS, f"Invalid params: {e}")
    else:
        response = _error(req.id, METHOD_NOT_FOUND, f"Method not found: {req.method}")
    return None if req.is_notification else response


def encode_message(message: dict[str, Any]) -> str:
    return json.dumps(message, ensure_ascii=False, separators=(",", ":")) + "\n"


def serve(in_stream: IO, out_stream: IO, session: RpcSession) -> TrajectoryRecord:
    """逐行读取请求直到流关闭；传输错误也会结束会话并写出记录。"""
    try:
        for line in in_stream:
            if isinstance(line, bytes):
                line = line.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            response = handle_message(session, line)
            if response is None:
                continue
            text = encode_message(response)
            binary = isinstance(out_stream, (io.RawIOBase, io.BufferedIOBase))
            out_stream.write(text.encode("utf-8") if binary else text)
            out_stream.flush()
    except OSError as e:
        logger.warning("transport error, closing session: {}", e)
    finally:
        record = session.close()
    return record
