from __future__ import annotations

"""建模文档：坐标系、草图与实体的注册表，以及六个建模工具的执行语义。

每个工具返回 InterfaceResult；内核错误在这里转换成失败反馈，不向外抛出。
"""

from dataclasses import dataclass
from typing import Callable, Iterator, Literal, Sequence

from loguru import logger

from ..config import GeometryConfig
from . import feedback as fb
from .geometry_kernel import (
    BooleanOp,
    CoordinateSystem,
    CsgSolid,
    DuplicateName,
    EmptyResult,
    GeometricError,
    InvalidParameter,
    KernelError,
    Leaf,
    MultiFuse,
    Node,
    OperandConsumed,
    Sketch,
    SketchElement,
    UnknownFrame,
    UnknownObject,
    UnknownSketch,
    build_sketch,
    extrude,
    is_empty,
    make_frame,
)

BOOLEAN_OPS: tuple[BooleanOp, ...] = ("cut", "fuse", "common")
FINAL_MODEL_NAME = "FinalModel"


@dataclass
class RegistryEntry:
    name: str
    kind: Literal["sketch", "solid"]
    value: Sketch | CsgSolid
    consumed: bool = False


class DocumentState:
    """单个 episode 的对象注册表（单写者）。

    - frames：坐标系，独立命名空间
    - objects：草图与实体共享命名空间，按创建顺序保存，只增不删
    """

    def __init__(self, geometry: GeometryConfig | None = None) -> None:
        self.geometry = geometry or GeometryConfig()
        self.frames: dict[str, CoordinateSystem] = {}
        self._objects: dict[str, RegistryEntry] = {}

    # ------------------------------------------------------------------
    # 查询
    # ------------------------------------------------------------------

    def entries(self) -> Iterator[RegistryEntry]:
        return iter(self._objects.values())

    @property
    def creation_order(self) -> list[str]:
        return list(self._objects)

    def __contains__(self, name: str) -> bool:
        return name in self._objects

    def entry(self, name: str) -> RegistryEntry:
        return self._objects[name]

    def frame(self, name: str) -> CoordinateSystem:
        try:
            return self.frames[name]
        except KeyError:
            raise UnknownFrame(f"coordinate system {name} does not exist") from None

    def sketch(self, name: str) -> Sketch:
        entry = self._objects.get(name)
        if entry is None or entry.kind != "sketch":
            raise UnknownSketch(f"sketch {name} does not exist")
        return entry.value  # type: ignore[return-value]

    def solid(self, name: str) -> CsgSolid:
        entry = self._objects.get(name)
        if entry is None or entry.kind != "solid":
            raise UnknownObject(f"solid {name} does not exist")
        return entry.value  # type: ignore[return-value]

    def live_solid(self, name: str) -> CsgSolid:
        solid = self.solid(name)
        if self._objects[name].consumed:
            raise OperandConsumed(f"solid {name} was already consumed by a Boolean operation")
        return solid

    def final_solid(self) -> tuple[str, CsgSolid] | None:
        """FinalModel 优先，否则取最后一个未被消耗的实体。"""
        entry = self._objects.get(FINAL_MODEL_NAME)
        if entry is not None and entry.kind == "solid":
            return entry.name, entry.value  # type: ignore[return-value]
        for entry in reversed(list(self._objects.values())):
            if entry.kind == "solid" and not entry.consumed:
                return entry.name, entry.value  # type: ignore[return-value]
        return None

    def _claim(self, name: str) -> None:
        if name in self._objects:
            raise DuplicateName(f"name {name} is already registered")

    def _register(self, name: str, kind: Literal["sketch", "solid"], value) -> None:
        self._objects[name] = RegistryEntry(name=name, kind=kind, value=value)

    # ------------------------------------------------------------------
    # 工具
    # ------------------------------------------------------------------

    def set_coord_system(
        self,
        name: str,
        origin: Sequence[float],
        rotation: Sequence[float],
    ) -> fb.InterfaceResult:
        def run() -> fb.InterfaceResult:
            if name in self.frames:
                raise DuplicateName(f"coordinate system {name} already exists")
            frame = make_frame(name, origin, rotation)
            self.frames[name] = frame
            return fb.InterfaceResult.ok(
                fb.COORD_SUCCESS.format(
                    name=name,
                    origin=fb.fmt_vector(frame.origin),
                    rotation=fb.fmt_vector(frame.rotation),
                    z_axis=fb.fmt_vector(frame.z_axis.round(9) + 0.0),
                )
            )

        return _guard(
            "set_coord_system",
            run,
            lambda e: fb.COORD_FAIL.format(detail=e.describe()),
        )

    def create_complex_sketch(
        self,
        elements: Sequence[SketchElement],
        sketch_name: str,
        frame: str,
    ) -> fb.InterfaceResult:
        def run() -> fb.InterfaceResult:
            self._claim(sketch_name)
            sketch = build_sketch(
                sketch_name,
                self.frame(frame),
                elements,
                arc_segments=self.geometry.arc_segments,
                loop_close_tol=self.geometry.loop_close_tol,
            )
            self._register(sketch_name, "sketch", sketch)
            return fb.InterfaceResult.ok(
                fb.SKETCH_SUCCESS.format(sketch_name=sketch_name, face_name=sketch.face_name)
            )

        def on_error(e: KernelError) -> str:
            if isinstance(e, GeometricError):
                return fb.SKETCH_GEOMETRY_FAIL.format(detail=e.describe())
            return fb.SKETCH_FAIL.format(detail=e.describe())

        return _guard(
            "create_complex_sketch",
            run,
            on_error,
            internal=lambda e: fb.SKETCH_INTERNAL.format(detail=e),
        )

    def create_simple_sketch(
        self,
        element: SketchElement,
        sketch_name: str,
        frame: str,
    ) -> fb.InterfaceResult:
        # 单个直线/圆弧无法闭合，由环推导报 OpenLoop
        return self.create_complex_sketch([element], sketch_name, frame)

    def extrude_face(self, sketch_name: str, depth: float, solid_name: str) -> fb.InterfaceResult:
        def run() -> fb.InterfaceResult:
            profile = extrude(self.sketch(sketch_name), depth)
            self._claim(solid_name)
            self._register(solid_name, "solid", Leaf(profile))
            return fb.InterfaceResult.ok(
                fb.EXTRUDE_SUCCESS.format(
                    sketch_name=sketch_name,
                    depth=fb.fmt_number(profile.depth),
                    solid_name=solid_name,
                )
            )

        return _guard(
            "extrude_face",
            run,
            lambda e: fb.EXTRUDE_FAIL.format(sketch_name=sketch_name, detail=e.describe()),
        )

    def boolean_operation(
        self,
        base_object_name: str,
        tool_object_name: str,
        operation: BooleanOp,
        name: str,
    ) -> fb.InterfaceResult:
        def run() -> fb.InterfaceResult:
            if operation not in BOOLEAN_OPS:
                raise InvalidParameter(f"unknown Boolean operation {operation}")
            base = self.live_solid(base_object_name)
            tool = self.live_solid(tool_object_name)
            self._claim(name)
            node = Node(operation, base, tool)
            if operation != "fuse" and is_empty(
                node, self.geometry.empty_check_resolution, self.geometry.eps_geom
            ):
                raise EmptyResult(f"the result of {operation} is an empty solid")
            self._objects[base_object_name].consumed = True
            self._objects[tool_object_name].consumed = True
            self._register(name, "solid", node)
            return fb.InterfaceResult.ok(fb.BOOLEAN_SUCCESS.format(name=name, operation=operation))

        return _guard(
            "boolean_operation",
            run,
            lambda e: fb.BOOLEAN_FAIL.format(
                operation=operation,
                base=base_object_name,
                tool=tool_object_name,
                detail=e.describe(),
            ),
        )

    def multiple_fuse(self, object_names: Sequence[str], name: str) -> fb.InterfaceResult:
        names = list(object_names)

        def run() -> fb.InterfaceResult:
            children = tuple(self.live_solid(n) for n in names)
            self._claim(name)
            node = MultiFuse(children)
            for n in names:
                self._objects[n].consumed = True
            self._register(name, "solid", node)
            return fb.InterfaceResult.ok(
                fb.MULTI_FUSE_SUCCESS.format(name=name, names=fb.fmt_names(names))
            )

        return _guard(
            "multiple_fuse",
            run,
            lambda e: fb.MULTI_FUSE_FAIL.format(
                names=fb.fmt_names(names), name=name, detail=e.describe()
            ),
        )


def _guard(
    tool: str,
    run: Callable[[], fb.InterfaceResult],
    on_error: Callable[[KernelError], str],
    internal: Callable[[Exception], str] | None = None,
) -> fb.InterfaceResult:
    """执行工具；内核错误走失败模板，其它异常走内部错误模板。"""
    try:
        return run()
    except KernelError as e:
        logger.debug("{} failed: {}", tool, e.describe())
        return fb.InterfaceResult.fail(on_error(e), detail=e.describe())
    except Exception as e:  # noqa: BLE001
        logger.opt(exception=e).warning("{} raised an unexpected error", tool)
        message = internal(e) if internal else fb.INTERNAL_FAIL.format(tool=tool, detail=e)
        return fb.InterfaceResult.fail(message, detail=f"{type(e).__name__}: {e}")
