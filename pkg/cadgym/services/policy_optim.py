from __future__ import annotations

"""RL 数学：困惑度、组内相对优势、带 KL 的裁剪 GRPO 目标、行为克隆损失。

所有损失都是 log-prob 数组的纯函数；grpo_loss 额外给出对 logp_new 的解析梯度。
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Protocol, Sequence, runtime_checkable

import numpy as np

if TYPE_CHECKING:
    from .gym import EpisodeState

Baseline = Literal["mean", "max"]


class PolicyOptimError(ValueError):
    """RL 数学的输入不合法。"""


class EmptyMask(PolicyOptimError):
    pass


class NonFiniteRatio(PolicyOptimError):
    def __init__(self, trajectory: int, token: int) -> None:
        super().__init__(f"non-finite importance ratio at trajectory {trajectory}, token {token}")
        self.trajectory = trajectory
        self.token = token


@runtime_checkable
class PolicyInterface(Protocol):
    def sample(self, state: "EpisodeState") -> str: ...

    def logprobs(self, tokens: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class TokenBatch:
    """一条轨迹的逐 token log-prob；mask 为 True 表示 agent 生成的 token。"""

    logp_new: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray
    action_mask: np.ndarray

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("logp_new", "logp_old", "logp_ref"):
            a = np.asarray(getattr(self, name), dtype=float).ravel()
            if np.isnan(a).any() or (a > 0).any():
                raise PolicyOptimError(f"{name} must contain log-probabilities <= 0")
            arrays[name] = a
        arrays["action_mask"] = np.asarray(self.action_mask, dtype=bool).ravel()
        if len({len(a) for a in arrays.values()}) != 1:
            raise PolicyOptimError("logp_new, logp_old, logp_ref and action_mask must have equal length")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @classmethod
    def on_policy(cls, logp: np.ndarray, logp_ref: np.ndarray, mask: np.ndarray) -> "TokenBatch":
        return cls(logp, logp, logp_ref, mask)

    @property
    def masked_count(self) -> int:
        return int(self.action_mask.sum())

    def masked(self, values: np.ndarray) -> np.ndarray:
        if self.masked_count == 0:
            raise EmptyMask("action mask selects no token")
        return values[self.action_mask]


@dataclass(frozen=True, eq=False)
class RolloutGroup:
    """同一指令下的 G 条轨迹与其奖励。"""

    batches: tuple[TokenBatch, ...]
    rewards: tuple[float, ...]
    instruction: str = ""

    def __post_init__(self) -> None:
        if len(self.batches) < 2:
            raise PolicyOptimError(f"a rollout group needs G >= 2, got {len(self.batches)}")
        if len(self.batches) != len(self.rewards):
            raise PolicyOptimError("one reward per trajectory is required")

    @property
    def size(self) -> int:
        return len(self.batches)


@dataclass(frozen=True, eq=False)
class GrpoResult:
    loss: float
    policy_loss: float
    kl: float
    clip_fraction: float
    ratios: tuple[np.ndarray, ...]
    grads: tuple[np.ndarray, ...]


def perplexity(batch: TokenBatch) -> float:
    return math.exp(-float(np.mean(batch.masked(batch.logp_new))))


def bc_loss(batch: TokenBatch) -> float:
    """行为克隆：负的平均 log-likelihood，等于 ln(perplexity)。"""
    return -float(np.mean(batch.masked(batch.logp_new)))


def group_advantages(rewards: Sequence[float], baseline: Baseline = "mean") -> np.ndarray:
    """(R - baseline) / std，总体标准差；方差为 0 时全为 0。"""
    r = np.asarray(rewards, dtype=float)
    if len(r) < 2:
        raise PolicyOptimError(f"group advantages need G >= 2, got {len(r)}")
    std = float(r.std())
    if std == 0.0:
        return np.zeros_like(r)
    base = r.mean() if baseline == "mean" else r.max()
    return (r - base) / std


def kl_per_token(logp_new: np.ndarray, logp_ref: np.ndarray) -> np.ndarray:
    """k(r) = r - log r - 1，r = exp(logp_ref - logp_new)。"""
    log_r = np.asarray(logp_ref, dtype=float) - np.asarray(logp_new, dtype=float)
    return np.exp(log_r) - log_r - 1.0


def grpo_loss(
    group: RolloutGroup,
    advantages: Sequence[float],
    clip_eps: float = 0.2,
    kl_coef: float = 0.01,
) -> GrpoResult:
    """负的裁剪代理目标（减去 β·KL），先在轨迹内按 token 平均，再在组内平均。"""
    if clip_eps <= 0:
        raise PolicyOptimError(f"clip_eps must be > 0, got {clip_eps}")
    if kl_coef < 0:
        raise PolicyOptimError(f"kl_coef must be >= 0, got {kl_coef}")
    adv = np.asarray(advantages, dtype=float)
    if len(adv) != group.size:
        raise PolicyOptimError("one advantage per trajectory is required")

    g = group.size
    objective = surrogate_total = kl_total = 0.0
    clipped_tokens = masked_tokens = 0
    ratios, grads = [], []
    for i, (batch, a) in enumerate(zip(group.batches, adv)):
        mask = batch.action_mask
        t = batch.masked_count
        if t == 0:
            raise EmptyMask(f"trajectory {i} has no agent token")
        with np.errstate(over="ignore", invalid="ignore"):
            ratio = np.exp(batch.logp_new - batch.logp_old)
        bad = np.flatnonzero(mask & ~np.isfinite(ratio))
        if bad.size:
            raise NonFiniteRatio(i, int(bad[0]))

        unclipped = ratio * a
        clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * a
        use_unclipped = unclipped <= clipped
        surrogate = np.where(use_unclipped, unclipped, clipped)
        log_rho = batch.logp_ref - batch.logp_new
        rho = np.exp(log_rho)
        kl = rho - log_rho - 1.0

        surrogate_total += float(surrogate[mask].sum()) / t / g
        kl_total += float(kl[mask].sum()) / t / g
        objective += float((surrogate - kl_coef * kl)[mask].sum()) / t / g
        clipped_tokens += int((~use_unclipped & mask).sum())
        masked_tokens += t

        d_surrogate = np.where(use_unclipped, ratio * a, 0.0)
        grad = -(d_surrogate - kl_coef * (1.0 - rho)) / (g * t)
        grads.append(np.where(mask, grad, 0.0))
        ratios.append(ratio)

    return GrpoResult(
        loss=-objective,
        policy_loss=-surrogate_total,
        kl=kl_total,
        clip_fraction=clipped_tokens / masked_tokens,
        ratios=tuple(ratios),
        grads=tuple(grads),
    )
