from __future__ import annotations

"""轨迹存储：每行一条 JSON 记录，带 schema_version。"""

import json
import os
import threading
from pathlib import Path
from typing import Iterable

from pydantic import ValidationError

from .gym import SCHEMA_VERSION, TrajectoryRecord


class TrajectoryStoreError(RuntimeError):
    """轨迹文件读写失败。"""


class SchemaVersionError(TrajectoryStoreError):
    pass


class TrajectoryParseError(TrajectoryStoreError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


# 同一文件的追加写入串行化
_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    key = str(path.resolve())
    with _locks_guard:
        return _locks.setdefault(key, threading.Lock())


def save_trajectory(record: TrajectoryRecord) -> bytes:
    return record.model_dump_json().encode("utf-8") + b"\n"


def load_trajectory(data: bytes | str, line: int = 1) -> TrajectoryRecord:
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    try:
        payload = json.loads(text)
    except ValueError as e:
        raise TrajectoryParseError(line, f"invalid JSON: {e}") from None
    if not isinstance(payload, dict):
        raise TrajectoryParseError(line, "a trajectory record must be a JSON object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"line {line}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        return TrajectoryRecord.model_validate(payload)
    except ValidationError as e:
        raise TrajectoryParseError(line, str(e)) from None


def write_trajectories(
    path: str | os.PathLike[str],
    records: Iterable[TrajectoryRecord],
    append: bool = False,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path), path.open("ab" if append else "wb") as f:
        for record in records:
            f.write(save_trajectory(record))
    return path


def load_trajectories(path: str | os.PathLike[str]) -> list[TrajectoryRecord]:
    """按文件顺序读取；空行跳过，出错时报告行号（从 1 开始）。"""
    path = Path(path)
    try:
        lines = path.read_bytes().splitlines()
    except OSError as e:
        raise TrajectoryStoreError(f"无法读取轨迹文件 {path}：{e}") from e
    return [load_trajectory(raw, line=i) for i, raw in enumerate(lines, start=1) if raw.strip()]
