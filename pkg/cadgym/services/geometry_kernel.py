from __future__ import annotations

"""几何内核：坐标系、草图、拉伸与布尔运算。

实体是基于拉伸轮廓的惰性 CSG 树，只通过点包含判定求值，不做 B-rep/网格布尔。
体素化、体积、IoU、点云采样都建立在 classify_points 之上。
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Literal, Sequence, Union

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation
from shapely.geometry import LinearRing

ARC_SEGMENTS = 64
LOOP_CLOSE_TOL = 1e-6
EPS_GEOM = 1e-9

# 体素化时每批处理的点数
_CHUNK = 1 << 18

BooleanOp = Literal["cut", "fuse", "common"]


class KernelError(RuntimeError):
    """几何内核错误；code 即错误类名，用于反馈与测试。"""

    @property
    def code(self) -> str:
        return type(self).__name__

    def describe(self) -> str:
        return f"{self.code}: {self}"


class DuplicateName(KernelError):
    """名称已被注册。"""


class UnknownFrame(KernelError):
    """坐标系不存在。"""


class UnknownSketch(KernelError):
    """草图不存在。"""


class UnknownObject(KernelError):
    """实体不存在。"""


class OperandConsumed(KernelError):
    """操作数已被之前的布尔运算消耗。"""


class FewerThanTwoOperands(KernelError):
    """multiple_fuse 至少需要两个操作数。"""


class UnsupportedElement(KernelError):
    """不支持的草图元素（样条）。"""


class InvalidParameter(KernelError):
    """数值参数越界（半径、角度、零长度线段等）。"""


class NonFiniteInput(InvalidParameter):
    """输入包含 NaN/inf。"""


class NonPositiveDepth(InvalidParameter):
    """拉伸深度必须大于 0。"""


class GeometricError(KernelError):
    """草图几何问题；反馈中会附带逐环创建的建议。"""


class OpenLoop(GeometricError):
    """轮廓不闭合。"""


class SelfIntersection(GeometricError):
    """轮廓自相交或退化。"""


class EmptyResult(KernelError):
    """cut/common 的结果为空。"""


class EmptySolid(KernelError):
    """实体没有任何被占据的体素。"""


def _finite(values: Sequence[float], what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in out):
        raise NonFiniteInput(f"{what} must be finite, got {list(values)}")
    return out


# ---------------------------------------------------------------------------
# 坐标系
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinateSystem:
    """局部坐标系：原点 + 内旋 Z-Y-X 欧拉角（度）。

    rotation = (绕 Z, 绕 Y, 绕 X)，矩阵 R = Rz · Ry · Rx，列向量为局部轴在全局中的方向。
    """

    name: str
    origin: tuple[float, float, float]
    rotation: tuple[float, float, float]

    @cached_property
    def matrix(self) -> np.ndarray:
        return Rotation.from_euler("ZYX", self.rotation, degrees=True).as_matrix()

    @property
    def z_axis(self) -> np.ndarray:
        return self.matrix[:, 2]

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) @ self.matrix

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.matrix.T + np.asarray(self.origin)


def make_frame(
    name: str,
    origin: Sequence[float],
    rotation: Sequence[float],
) -> CoordinateSystem:
    """校验数值后构造坐标系。"""
    if len(origin) != 3 or len(rotation) != 3:
        raise InvalidParameter("origin and rotation must both have 3 components")
    return CoordinateSystem(
        name=name,
        origin=_finite(origin, "origin"),
        rotation=_finite(rotation, "rotation"),
    )


# ---------------------------------------------------------------------------
# 草图元素与轮廓
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Line:
    start: tuple[float, float]
    end: tuple[float, float]

    def validate(self) -> None:
        _finite((*self.start, *self.end), "line endpoints")
        if math.dist(self.start, self.end) == 0.0:
            raise InvalidParameter(f"line start and end coincide at {self.start}")


@dataclass(frozen=True)
class Arc:
    """逆时针圆弧，从 start_angle 扫到 end_angle（度）。"""

    center: tuple[float, float]
    radius: float
    start_angle: float
    end_angle: float

    @property
    def sweep(self) -> float:
        return (self.end_angle - self.start_angle) % 360.0

    def validate(self) -> None:
        _finite((*self.center, self.radius, self.start_angle, self.end_angle), "arc parameters")
        if self.radius <= 0:
            raise InvalidParameter(f"arc radius must be > 0, got {self.radius:g}")
        if not 0.0 < self.sweep < 360.0:
            raise InvalidParameter(
                f"arc sweep must be in (0, 360) degrees, got {self.sweep:g}"
            )


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def validate(self) -> None:
        _finite((*self.center, self.radius), "circle parameters")
        if self.radius <= 0:
            raise InvalidParameter(f"circle radius must be > 0, got {self.radius:g}")


@dataclass(frozen=True)
class Spline:
    """仅用于携带样条输入，派生轮廓时一律拒绝。"""

    points: tuple[tuple[float, float], ...] = ()

    def validate(self) -> None:
        raise UnsupportedElement("spline elements are not supported; use lines and arcs")


SketchElement = Union[Line, Arc, Circle, Spline]


def polygonize_circle(
    center: Sequence[float],
    radius: float,
    segments: int = ARC_SEGMENTS,
) -> np.ndarray:
    """整圆多边形化：顶点位于 2πk/n。"""
    t = np.arange(segments) * (2.0 * np.pi / segments)
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


def polygonize_arc(arc: Arc, segments_per_turn: int = ARC_SEGMENTS) -> np.ndarray:
    n = max(1, math.ceil(segments_per_turn * arc.sweep / 360.0))
    t = np.radians(arc.start_angle + np.linspace(0.0, arc.sweep, n + 1))
    return np.column_stack(
        [arc.center[0] + arc.radius * np.cos(t), arc.center[1] + arc.radius * np.sin(t)]
    )


def loop_area(loop: np.ndarray) -> float:
    """鞋带公式，返回绝对面积。"""
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _polyline(element: SketchElement, arc_segments: int) -> np.ndarray:
    if isinstance(element, Line):
        return np.array([element.start, element.end], dtype=float)
    return polygonize_arc(element, arc_segments)


def _chain_loop(
    first: np.ndarray,
    pending: list[np.ndarray],
    tol: float,
) -> np.ndarray:
    """从 first 出发按端点首尾相接，直到回到起点。"""
    parts = [first]
    start, end = first[0], first[-1]
    while math.dist(end, start) > tol or len(parts) == 1:
        match = None
        for i, poly in enumerate(pending):
            if math.dist(poly[0], end) <= tol:
                match = (i, poly)
                break
            if math.dist(poly[-1], end) <= tol:
                match = (i, poly[::-1])
                break
        if match is None:
            candidates = [math.dist(start, end)]
            candidates += [min(math.dist(p[0], end), math.dist(p[-1], end)) for p in pending]
            gap = min(candidates)
            raise OpenLoop(
                f"profile loop is open at ({end[0]:g}, {end[1]:g}): "
                f"gap {gap:g} exceeds tolerance {tol:g}"
            )
        i, poly = match
        pending.pop(i)
        parts.append(poly)
        end = poly[-1]
    points = np.vstack([parts[0]] + [p[1:] for p in parts[1:]])
    return points[:-1]


def _check_simple(loop: np.ndarray, tol: float) -> None:
    if len(loop) < 3 or loop_area(loop) <= tol * tol:
        raise SelfIntersection("profile loop is degenerate (zero area)")
    if not LinearRing(loop).is_simple:
        raise SelfIntersection("profile loop intersects itself")


def derive_loops(
    elements: Sequence[SketchElement],
    arc_segments: int = ARC_SEGMENTS,
    loop_close_tol: float = LOOP_CLOSE_TOL,
) -> list[np.ndarray]:
    """把草图元素串成闭合多边形环。

    - 圆单独成环
    - 直线与圆弧按端点链接（允许反向），间隙超过 loop_close_tol 视为开环
    - 每个环必须是简单多边形
    """
    if not elements:
        raise InvalidParameter("a sketch needs at least one element")
    for element in elements:
        element.validate()

    loops: list[np.ndarray] = []
    pending: list[np.ndarray] = []
    for element in elements:
        if isinstance(element, Circle):
            loops.append(polygonize_circle(element.center, element.radius, arc_segments))
        else:
            pending.append(_polyline(element, arc_segments))

    while pending:
        loops.append(_chain_loop(pending.pop(0), pending, loop_close_tol))

    for loop in loops:
        _check_simple(loop, loop_close_tol)
    return loops


@dataclass(frozen=True, eq=False)
class Sketch:
    name: str
    frame: CoordinateSystem
    elements: tuple[SketchElement, ...]
    loops: tuple[np.ndarray, ...]

    @property
    def face_name(self) -> str:
        return f"{self.name}_Face"


def build_sketch(
    name: str,
    frame: CoordinateSystem,
    elements: Sequence[SketchElement],
    arc_segments: int = ARC_SEGMENTS,
    loop_close_tol: float = LOOP_CLOSE_TOL,
) -> Sketch:
    loops = derive_loops(elements, arc_segments, loop_close_tol)
    return Sketch(name=name, frame=frame, elements=tuple(elements), loops=tuple(loops))


def points_in_loop(points: np.ndarray, loop: np.ndarray) -> np.ndarray:
    """射线交叉法（偶奇规则），对 N×2 点向量化。"""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    xj, yj = loop[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        for xi, yi in loop:
            crosses = (yi > y) != (yj > y)
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
            inside ^= crosses & (x < x_cross)
            xj, yj = xi, yi
    return inside


# ---------------------------------------------------------------------------
# 实体
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExtrudedProfile:
    """沿草图局部 +Z 单向拉伸。"""

    sketch: Sketch
    depth: float

    @cached_property
    def local_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.vstack(self.sketch.loops)
        return pts.min(axis=0), pts.max(axis=0)

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.local_bounds
        corners = np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (0.0, self.depth)]
        )
        world = self.sketch.frame.to_world(corners)
        return world.min(axis=0), world.max(axis=0)


def extrude(sketch: Sketch, depth: float) -> ExtrudedProfile:
    (depth,) = _finite((depth,), "depth")
    if depth <= 0:
        raise NonPositiveDepth(f"extrusion depth must be > 0, got {depth:g}")
    if not sketch.loops:
        raise InvalidParameter(f"sketch {sketch.name} has no closed loop")
    return ExtrudedProfile(sketch=sketch, depth=depth)


@dataclass(frozen=True, eq=False)
class Leaf:
    profile: ExtrudedProfile


@dataclass(frozen=True, eq=False)
class Node:
    op: BooleanOp
    base: "CsgSolid"
    tool: "CsgSolid"


@dataclass(frozen=True, eq=False)
class MultiFuse:
    children: tuple["CsgSolid", ...]

    def __post_init__(self) -> None:
        if len(self.children) < 2:
            raise FewerThanTwoOperands(
                f"multiple fuse needs at least 2 operands, got {len(self.children)}"
            )


CsgSolid = Union[Leaf, Node, MultiFuse]


def iter_leaves(solid: CsgSolid) -> Iterator[Leaf]:
    if isinstance(solid, Leaf):
        yield solid
    elif isinstance(solid, Node):
        yield from iter_leaves(solid.base)
        yield from iter_leaves(solid.tool)
    else:
        for child in solid.children:
            yield from iter_leaves(child)


def bounding_box(solid: CsgSolid) -> tuple[np.ndarray, np.ndarray] | None:
    """保守的轴对齐包围盒；common 的包围盒为空时返回 None。"""
    if isinstance(solid, Leaf):
        return solid.profile.world_bounds()
    if isinstance(solid, Node):
        base = bounding_box(solid.base)
        if solid.op == "cut" or base is None:
            return base
        tool = bounding_box(solid.tool)
        if solid.op == "fuse":
            if tool is None:
                return base
            return np.minimum(base[0], tool[0]), np.maximum(base[1], tool[1])
        if tool is None:
            return None
        lo, hi = np.maximum(base[0], tool[0]), np.minimum(base[1], tool[1])
        return (lo, hi) if np.all(hi > lo) else None
    boxes = [b for b in (bounding_box(c) for c in solid.children) if b is not None]
    if not boxes:
        return None
    return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)


def _classify_leaf(leaf: Leaf, points: np.ndarray, eps: float) -> np.ndarray:
    profile = leaf.profile
    result = np.zeros(len(points), dtype=bool)
    lo, hi = profile.world_bounds()
    candidates = np.flatnonzero(np.all((points >= lo - eps) & (points <= hi + eps), axis=1))
    if candidates.size == 0:
        return result
    local = profile.sketch.frame.to_local(points[candidates])
    z = local[:, 2]
    slab = (z > eps) & (z < profile.depth - eps)
    flat = local[slab, :2]
    inside = np.zeros(len(flat), dtype=bool)
    for loop in profile.sketch.loops:
        inside ^= points_in_loop(flat, loop)
    hit = candidates[slab]
    result[hit[inside]] = True
    return result


def classify_points(solid: CsgSolid, points: np.ndarray, eps: float = EPS_GEOM) -> np.ndarray:
    """对 N×3 点做包含判定，返回布尔数组。

    cut = base ∧ ¬tool，fuse = ∨，common = ∧；子树只在需要的点上求值。
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if isinstance(solid, Leaf):
        return _classify_leaf(solid, points, eps)
    if isinstance(solid, Node):
        result = classify_points(solid.base, points, eps)
        if solid.op == "fuse":
            idx = np.flatnonzero(~result)
            result[idx] = classify_points(solid.tool, points[idx], eps)
        else:
            idx = np.flatnonzero(result)
            tool = classify_points(solid.tool, points[idx], eps)
            result[idx] = ~tool if solid.op == "cut" else tool
        return result
    result = np.zeros(len(points), dtype=bool)
    for child in solid.children:
        idx = np.flatnonzero(~result)
        if idx.size == 0:
            break
        result[idx] = classify_points(child, points[idx], eps)
    return result


def contains(solid: CsgSolid, point: Sequence[float], eps: float = EPS_GEOM) -> bool:
    """单点包含判定（严格内部，容差 eps）。"""
    return bool(classify_points(solid, np.asarray(point, dtype=float).reshape(1, 3), eps)[0])


# ---------------------------------------------------------------------------
# 体素化
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """R³ 占据网格；cells[i, j, k] 对应第 (i, j, k) 个单元中心。"""

    resolution: int
    lo: np.ndarray
    hi: np.ndarray
    cells: np.ndarray = field(repr=False)

    @property
    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / self.resolution

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def occupied_count(self) -> int:
        return int(self.cells.sum())

    @property
    def volume(self) -> float:
        return self.occupied_count * self.cell_volume

    def centers(self, indices: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(indices, dtype=float) + 0.5) * self.cell_size


def grid_bounds(
    lo: np.ndarray,
    hi: np.ndarray,
    resolution: int,
) -> tuple[np.ndarray, np.ndarray]:
    """包围盒每侧外扩一个单元：R 个单元中 R-2 个覆盖原包围盒。R = 2 时不留余量。"""
    if resolution < 2:
        raise InvalidParameter(f"resolution must be >= 2, got {resolution}")
    if resolution == 2:
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    h = (np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)) / (resolution - 2)
    return lo - h, hi + h


def voxelize(
    solid: CsgSolid,
    resolution: int,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    eps: float = EPS_GEOM,
    allow_empty: bool = False,
) -> OccupancyGrid:
    """单元中心满足 contains() 即视为占据。

    bounds 为空时使用实体外扩一个单元的包围盒；IoU 等场景由调用方传入共享范围。
    """
    if bounds is None:
        box = bounding_box(solid)
        if box is None or not np.all(box[1] - box[0] > 0):
            if allow_empty:
                return OccupancyGrid(resolution, np.zeros(3), np.ones(3),
                                     np.zeros((resolution,) * 3, dtype=bool))
            raise EmptySolid("solid has an empty bounding box")
        lo, hi = grid_bounds(box[0], box[1], resolution)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)

    step = (hi - lo) / resolution
    axis = [lo[d] + (np.arange(resolution) + 0.5) * step[d] for d in range(3)]
    gx, gy, gz = np.meshgrid(*axis, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    occupied = np.zeros(len(centers), dtype=bool)
    for start in range(0, len(centers), _CHUNK):
        occupied[start:start + _CHUNK] = classify_points(solid, centers[start:start + _CHUNK], eps)

    grid = OccupancyGrid(resolution, lo, hi, occupied.reshape((resolution,) * 3))
    if grid.occupied_count == 0 and not allow_empty:
        raise EmptySolid("no voxel is occupied by the solid")
    logger.debug("voxelize: R={} occupied={}", resolution, grid.occupied_count)
    return grid


def volume(solid: CsgSolid, resolution: int = 64, eps: float = EPS_GEOM) -> float:
    return voxelize(solid, resolution, eps=eps).volume


_WITNESS_PULL = (1e-3, 1e-2, 0.1, 0.5)
_WITNESS_DEPTHS = (0.5, 1e-3, 1.0 - 1e-3)


def witness_points(solid: CsgSolid) -> np.ndarray:
    """每个叶子的环顶点与边中点向环心内缩后的点，取中间和两端附近三层深度。"""
    chunks = []
    for leaf in iter_leaves(solid):
        profile = leaf.profile
        depths = profile.depth * np.asarray(_WITNESS_DEPTHS)
        for loop in profile.sketch.loops:
            anchors = np.vstack([loop, 0.5 * (loop + np.roll(loop, -1, axis=0))])
            center = loop.mean(axis=0)
            flat = np.vstack([anchors + t * (center - anchors) for t in _WITNESS_PULL])
            local = np.column_stack(
                [np.repeat(flat, len(depths), axis=0), np.tile(depths, len(flat))]
            )
            chunks.append(profile.sketch.frame.to_world(local))
    return np.vstack(chunks)


def is_empty(
    solid: CsgSolid,
    resolution: int,
    eps: float = EPS_GEOM,
    max_resolution: int | None = None,
) -> bool:
    """见证点和逐级加密（R, 2R, ... 直到 max_resolution，默认 4R）的网格都找不到占据点才算空。"""
    if bounding_box(solid) is None:
        return True
    if classify_points(solid, witness_points(solid), eps).any():
        return False
    limit = max_resolution or 4 * resolution
    r = resolution
    while True:
        if voxelize(solid, r, eps=eps, allow_empty=True).occupied_count:
            return False
        if r >= limit:
            return True
        r = min(2 * r, limit)
