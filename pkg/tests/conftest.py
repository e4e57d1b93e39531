from __future__ import annotations

import sys

import pytest
from loguru import logger

from cadgym.config import BUNDLED_TASKS_DIR, AppConfig
from cadgym.services.gym import CadGym, load_task, load_tasks
from cadgym.services.reward import GeometricJudge, RewardWeights


@pytest.fixture(autouse=True, scope="session")
def _quiet_logs():
    logger.remove()
    logger.add(sys.stderr, level="WARNING")
    yield


@pytest.fixture(scope="session")
def config() -> AppConfig:
    return AppConfig.load()


@pytest.fixture(scope="session")
def fast_config(config: AppConfig) -> AppConfig:
    """降低判定与空结果检查分辨率，端到端测试用。"""
    return config.override(
        reward={"judge_resolution": 40},
        geometry={"empty_check_resolution": 12},
    )


@pytest.fixture(scope="session")
def tasks():
    return load_tasks(BUNDLED_TASKS_DIR)


@pytest.fixture(scope="session")
def golden_task():
    return load_task(BUNDLED_TASKS_DIR / "l3_boss_plate.json")


@pytest.fixture(scope="session")
def gym(fast_config: AppConfig) -> CadGym:
    return CadGym.from_config(fast_config)


@pytest.fixture(scope="session")
def judge(fast_config: AppConfig) -> GeometricJudge:
    return GeometricJudge.from_config(fast_config.reward)


@pytest.fixture(scope="session")
def weights() -> RewardWeights:
    return RewardWeights()
