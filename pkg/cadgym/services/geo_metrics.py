from __future__ import annotations

"""几何评估指标：IR、CD、MMD、IoU、PD、COV、JSD。

点云从实体表面壳层体素采样，比较前按质心与最长边归一化。
"""

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from loguru import logger
from scipy.spatial import KDTree
from scipy.stats import entropy

from .geometry_kernel import (
    EPS_GEOM,
    CsgSolid,
    EmptySolid,
    bounding_box,
    grid_bounds,
    voxelize,
)
from .tool_library import EXTRUDE_FACE, ToolCall


class MetricError(RuntimeError):
    """指标输入不合法。"""


class EmptyCloud(MetricError):
    pass


class EmptySet(MetricError):
    pass


class ResolutionMismatch(MetricError):
    pass


class ZeroParts(MetricError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray = field(repr=False)
    provenance: tuple[str, int, int] = ("", 0, 0)
    normalized: bool = False

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyCloud("a point cloud needs at least one point")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class VoxelDistribution:
    resolution: int
    probabilities: np.ndarray = field(repr=False)
    clipped: int = 0

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (self.resolution,) * 3:
            raise ResolutionMismatch(f"expected {(self.resolution,) * 3} cells, got {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise MetricError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probabilities", p)


@dataclass(frozen=True)
class EpisodeOutcome:
    """一次生成结果：是否以 COMPLETED 结束，以及最终实体。"""

    completed: bool
    solid: CsgSolid | None


# ---------------------------------------------------------------------------
# 点云
# ---------------------------------------------------------------------------


def _shell(cells: np.ndarray) -> np.ndarray:
    """至少有一个 6 邻域为空的占据体素。"""
    padded = np.pad(cells, 1, constant_values=False)
    interior = np.ones_like(cells)
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return cells & ~interior


def sample_points(
    solid: CsgSolid,
    n: int,
    seed: int,
    resolution: int = 64,
    solid_id: str = "",
    eps: float = EPS_GEOM,
) -> PointCloud:
    """在表面壳层体素内均匀抖动采样 n 个点；同一 seed 结果相同。"""
    if n < 1:
        raise EmptyCloud("n must be >= 1")
    grid = voxelize(solid, resolution, eps=eps)
    shell = np.argwhere(_shell(grid.cells))
    rng = np.random.default_rng(seed)
    picks = shell[rng.integers(len(shell), size=n)]
    points = grid.lo + (picks + rng.random((n, 3))) * grid.cell_size
    return PointCloud(points, provenance=(solid_id, n, seed))


def normalize(cloud: PointCloud) -> PointCloud:
    """平移到质心、等比缩放到最长包围盒边长为 1；零尺寸时只平移。

    结果坐标落在 [-1, 1]，不保证在 [-0.5, 0.5] 内。
    """
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
    if extent > 0:
        centered = centered / extent
    return PointCloud(centered, provenance=cloud.provenance, normalized=True)


# ---------------------------------------------------------------------------
# 点云距离
# ---------------------------------------------------------------------------


def chamfer(x: PointCloud, y: PointCloud) -> float:
    """双向平方欧氏 Chamfer 距离。"""
    d_xy, _ = KDTree(y.points).query(x.points)
    d_yx, _ = KDTree(x.points).query(y.points)
    return float(np.mean(d_xy**2) + np.mean(d_yx**2))


def chamfer_matrix(generated: Sequence[PointCloud], reference: Sequence[PointCloud]) -> np.ndarray:
    if not generated or not reference:
        raise EmptySet("generated and reference sets must be non-empty")
    return np.array([[chamfer(g, r) for r in reference] for g in generated])


def mmd(generated: Sequence[PointCloud], reference: Sequence[PointCloud]) -> float:
    return float(chamfer_matrix(generated, reference).min(axis=1).mean())


def cov(generated: Sequence[PointCloud], reference: Sequence[PointCloud]) -> float:
    nearest = chamfer_matrix(generated, reference).argmin(axis=1)
    return len(np.unique(nearest)) / len(reference)


def mmd_cov(dist: np.ndarray) -> tuple[float, float]:
    """从已算好的 |G|×|R| 距离矩阵同时得到 MMD 与 COV。"""
    return float(dist.min(axis=1).mean()), len(np.unique(dist.argmin(axis=1))) / dist.shape[1]


# ---------------------------------------------------------------------------
# 体积指标
# ---------------------------------------------------------------------------


def iou(a: CsgSolid, b: CsgSolid, resolution: int = 64, eps: float = EPS_GEOM) -> float:
    """共享网格上的体素 IoU；网格范围为两者包围盒的并集。"""
    boxes = [box for box in (bounding_box(a), bounding_box(b)) if box is not None]
    if not boxes:
        return 0.0
    lo = np.min([box[0] for box in boxes], axis=0)
    hi = np.max([box[1] for box in boxes], axis=0)
    bounds = grid_bounds(lo, hi, resolution)
    ga = voxelize(a, resolution, bounds=bounds, eps=eps, allow_empty=True).cells
    gb = voxelize(b, resolution, bounds=bounds, eps=eps, allow_empty=True).cells
    union = int(np.count_nonzero(ga | gb))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(ga & gb)) / union


def voxel_distribution(
    clouds: PointCloud | Iterable[PointCloud],
    resolution: int = 32,
    smoothing: float = 1e-12,
) -> VoxelDistribution:
    """[-0.5, 0.5]³ 上的占据直方图，加平滑后归一化。"""
    if isinstance(clouds, PointCloud):
        clouds = [clouds]
    points = np.vstack([c.points for c in clouds])
    # 质心归一化后最远点可能超出 [-0.5, 0.5]，截到边界单元并计数
    clipped = int(np.count_nonzero(np.any(np.abs(points) > 0.5, axis=1)))
    if clipped:
        logger.debug("voxel_distribution: {} of {} points clipped to the unit cube", clipped, len(points))
    points = np.clip(points, -0.5, 0.5)
    counts, _ = np.histogramdd(points, bins=resolution, range=[(-0.5, 0.5)] * 3)
    counts = counts + smoothing
    return VoxelDistribution(resolution, counts / counts.sum(), clipped)


def jsd(p: VoxelDistribution, q: VoxelDistribution) -> float:
    """以 2 为底的 Jensen-Shannon 散度，取值 [0, 1]。"""
    if p.resolution != q.resolution:
        raise ResolutionMismatch(f"resolution {p.resolution} != {q.resolution}")
    pp, qq = p.probabilities.ravel(), q.probabilities.ravel()
    m = 0.5 * (pp + qq)
    value = 0.5 * entropy(pp, m, base=2) + 0.5 * entropy(qq, m, base=2)
    return float(min(max(value, 0.0), 1.0))


# ---------------------------------------------------------------------------
# 有效性与复杂度
# ---------------------------------------------------------------------------


def is_valid_outcome(outcome: EpisodeOutcome, resolution: int = 64) -> bool:
    if not outcome.completed or outcome.solid is None:
        return False
    try:
        voxelize(outcome.solid, resolution)
    except EmptySolid:
        return False
    return True


def invalidity_ratio(outcomes: Sequence[EpisodeOutcome], resolution: int = 64) -> float:
    if not outcomes:
        return 0.0
    invalid = sum(not is_valid_outcome(o, resolution) for o in outcomes)
    logger.debug("invalidity: {}/{}", invalid, len(outcomes))
    return invalid / len(outcomes)


def _count_scalars(value: Any) -> int:
    if isinstance(value, bool) or isinstance(value, str) or value is None:
        return 0
    if isinstance(value, (int, float)):
        return 1
    if isinstance(value, dict):
        return sum(_count_scalars(v) for v in value.values())
    if isinstance(value, (list, tuple)):
        return sum(_count_scalars(v) for v in value)
    return 0


def parameter_count(program: Sequence[ToolCall]) -> int:
    return sum(_count_scalars(call.arguments) for call in program)


def part_count(program: Sequence[ToolCall]) -> int:
    return sum(call.name == EXTRUDE_FACE for call in program)


def parameter_density(program: Sequence[ToolCall], part_count: int) -> float:
    """每个零件的平均数值参数个数。"""
    if part_count < 1:
        raise ZeroParts(f"part_count must be >= 1, got {part_count}")
    return parameter_count(program) / part_count
