from __future__ import annotations

"""六个建模工具：描述符（tools/list）、参数模型与分发。"""

from typing import Annotated, Any, Callable, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, StringConstraints, ValidationError

from . import feedback as fb
from .cad_document import DocumentState
from .geometry_kernel import Arc, Circle, KernelError, Line, SketchElement, Spline

SET_COORD_SYSTEM = "freecad-set_coord_system"
CREATE_COMPLEX_SKETCH = "freecad-create_complex_sketch"
CREATE_SIMPLE_SKETCH = "freecad-create_simple_sketch"
EXTRUDE_FACE = "freecad-extrude_face"
BOOLEAN_OPERATION = "freecad-boolean_operation"
MULTIPLE_FUSE = "freecad-multiple_fuse"

TOOL_NAMES = (
    SET_COORD_SYSTEM,
    CREATE_COMPLEX_SKETCH,
    CREATE_SIMPLE_SKETCH,
    EXTRUDE_FACE,
    BOOLEAN_OPERATION,
    MULTIPLE_FUSE,
)


class InvalidToolArguments(KernelError):
    """工具参数不符合 schema。"""


class ToolCall(BaseModel):
    """一次工具调用：name + arguments。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    arguments: dict[str, Any] = Field(default_factory=dict)


# ---------------------------------------------------------------------------
# 参数模型
# ---------------------------------------------------------------------------

Identifier = Annotated[str, StringConstraints(pattern=r"^[A-Za-z_][A-Za-z0-9_.\-]{0,63}$")]
Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]


class _Args(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class LineSpec(_Args):
    type: Literal["line"]
    start: Vec2
    end: Vec2

    def to_element(self) -> SketchElement:
        return Line(self.start, self.end)


class ArcSpec(_Args):
    type: Literal["arc"]
    center: Vec2
    radius: float
    start_angle: float
    end_angle: float

    def to_element(self) -> SketchElement:
        return Arc(self.center, self.radius, self.start_angle, self.end_angle)


class CircleSpec(_Args):
    type: Literal["circle"]
    center: Vec2
    radius: float

    def to_element(self) -> SketchElement:
        return Circle(self.center, self.radius)


class SplineSpec(_Args):
    model_config = ConfigDict(frozen=True, extra="allow")

    type: Literal["spline"]
    points: list[Vec2] = Field(default_factory=list)

    def to_element(self) -> SketchElement:
        return Spline(tuple(self.points))


ElementSpec = Annotated[
    Union[LineSpec, ArcSpec, CircleSpec, SplineSpec], Field(discriminator="type")
]


class SetCoordSystemArgs(_Args):
    name: Identifier
    origin: Vec3
    rotation: Vec3


class CreateComplexSketchArgs(_Args):
    sketch_name: Identifier
    frame: Identifier
    elements: list[ElementSpec] = Field(min_length=1)


class CreateSimpleSketchArgs(_Args):
    sketch_name: Identifier
    frame: Identifier
    element: ElementSpec


class ExtrudeFaceArgs(_Args):
    sketch_name: Identifier
    depth: float
    solid_name: Identifier


class BooleanOperationArgs(_Args):
    base_object_name: Identifier
    tool_object_name: Identifier
    operation: Literal["cut", "fuse", "common"]
    name: Identifier


class MultipleFuseArgs(_Args):
    object_names: list[Identifier]
    name: Identifier


ARGUMENT_MODELS: dict[str, type[_Args]] = {
    SET_COORD_SYSTEM: SetCoordSystemArgs,
    CREATE_COMPLEX_SKETCH: CreateComplexSketchArgs,
    CREATE_SIMPLE_SKETCH: CreateSimpleSketchArgs,
    EXTRUDE_FACE: ExtrudeFaceArgs,
    BOOLEAN_OPERATION: BooleanOperationArgs,
    MULTIPLE_FUSE: MultipleFuseArgs,
}


def decode_arguments(name: str, arguments: Any) -> _Args:
    """按工具 schema 校验参数；未知工具或校验失败抛 InvalidToolArguments。"""
    model = ARGUMENT_MODELS.get(name)
    if model is None:
        raise InvalidToolArguments(f"unknown tool {name}")
    try:
        return model.model_validate(arguments)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        raise InvalidToolArguments(problems) from e


# ---------------------------------------------------------------------------
# 分发
# ---------------------------------------------------------------------------


def _set_coord_system(doc: DocumentState, a: SetCoordSystemArgs) -> fb.InterfaceResult:
    return doc.set_coord_system(a.name, a.origin, a.rotation)


def _create_complex_sketch(doc: DocumentState, a: CreateComplexSketchArgs) -> fb.InterfaceResult:
    return doc.create_complex_sketch([e.to_element() for e in a.elements], a.sketch_name, a.frame)


def _create_simple_sketch(doc: DocumentState, a: CreateSimpleSketchArgs) -> fb.InterfaceResult:
    return doc.create_simple_sketch(a.element.to_element(), a.sketch_name, a.frame)


def _extrude_face(doc: DocumentState, a: ExtrudeFaceArgs) -> fb.InterfaceResult:
    return doc.extrude_face(a.sketch_name, a.depth, a.solid_name)


def _boolean_operation(doc: DocumentState, a: BooleanOperationArgs) -> fb.InterfaceResult:
    return doc.boolean_operation(a.base_object_name, a.tool_object_name, a.operation, a.name)


def _multiple_fuse(doc: DocumentState, a: MultipleFuseArgs) -> fb.InterfaceResult:
    return doc.multiple_fuse(a.object_names, a.name)


_HANDLERS: dict[str, Callable[[DocumentState, Any], fb.InterfaceResult]] = {
    SET_COORD_SYSTEM: _set_coord_system,
    CREATE_COMPLEX_SKETCH: _create_complex_sketch,
    CREATE_SIMPLE_SKETCH: _create_simple_sketch,
    EXTRUDE_FACE: _extrude_face,
    BOOLEAN_OPERATION: _boolean_operation,
    MULTIPLE_FUSE: _multiple_fuse,
}


def execute(doc: DocumentState, name: str, args: _Args) -> fb.InterfaceResult:
    """执行已校验参数的工具调用。"""
    return _HANDLERS[name](doc, args)


def call_tool(doc: DocumentState, call: ToolCall) -> fb.InterfaceResult:
    """校验 + 执行；参数错误同样转换为失败结果。"""
    try:
        args = decode_arguments(call.name, call.arguments)
    except InvalidToolArguments as e:
        return fb.InterfaceResult.fail(
            fb.ARGUMENTS_FAIL.format(tool=call.name, detail=e), detail=e.describe()
        )
    return execute(doc, call.name, args)


# ---------------------------------------------------------------------------
# 描述符（tools/list）
# ---------------------------------------------------------------------------


def _vector(n: int, description: str) -> dict[str, Any]:
    return {
        "type": "array",
        "items": {"type": "number"},
        "minItems": n,
        "maxItems": n,
        "description": description,
    }


def _identifier(description: str) -> dict[str, Any]:
    return {"type": "string", "pattern": r"^[A-Za-z_][A-Za-z0-9_.\-]{0,63}$", "description": description}


_ELEMENT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "description": (
        "A sketch element. line: {type, start, end}; arc: {type, center, radius, "
        "start_angle, end_angle} counter-clockwise in degrees; circle: {type, center, radius}."
    ),
    "properties": {
        "type": {"type": "string", "enum": ["line", "arc", "circle"]},
        "start": _vector(2, "Line start point in sketch coordinates."),
        "end": _vector(2, "Line end point in sketch coordinates."),
        "center": _vector(2, "Arc or circle center in sketch coordinates."),
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "start_angle": {"type": "number"},
        "end_angle": {"type": "number"},
    },
    "required": ["type"],
}


TOOL_DESCRIPTORS: tuple[dict[str, Any], ...] = (
    {
        "name": SET_COORD_SYSTEM,
        "description": (
            "Create a named local coordinate system. rotation holds intrinsic Z-Y-X Euler "
            "angles in degrees; sketches drawn on the frame lie in its local XY plane."
        ),
        "inputSchema": {
            "type": "object",
            "properties": {
                "name": _identifier("Unique coordinate system name."),
                "origin": _vector(3, "Origin in global coordinates."),
                "rotation": _vector(3, "Rotation about Z, Y, X in degrees."),
            },
            "required": ["name", "origin", "rotation"],
        },
    },
    {
        "name": CREATE_COMPLEX_SKETCH,
        "description": (
            "Create a sketch composed of lines, circles and arcs on a coordinate system. "
            "Elements are chained into closed profile loops; nested loops become holes."
        ),
        "inputSchema": {
            "type": "object",
            "properties": {
                "sketch_name": _identifier("Unique sketch name."),
                "frame": _identifier("Name of an existing coordinate system."),
                "elements": {"type": "array", "items": _ELEMENT_SCHEMA, "minItems": 1},
            },
            "required": ["sketch_name", "frame", "elements"],
        },
    },
    {
        "name": CREATE_SIMPLE_SKETCH,
        "description": "Create a sketch from a single self-closing element (a circle).",
        "inputSchema": {
            "type": "object",
            "properties": {
                "sketch_name": _identifier("Unique sketch name."),
                "frame": _identifier("Name of an existing coordinate system."),
                "element": _ELEMENT_SCHEMA,
            },
            "required": ["sketch_name", "frame", "element"],
        },
    },
    {
        "name": EXTRUDE_FACE,
        "description": (
            "Extrude the face of a sketch along the local +Z axis of its coordinate system."
        ),
        "inputSchema": {
            "type": "object",
            "properties": {
                "sketch_name": _identifier("Name of an existing sketch."),
                "depth": {"type": "number", "exclusiveMinimum": 0},
                "solid_name": _identifier("Unique name of the new solid."),
            },
            "required": ["sketch_name", "depth", "solid_name"],
        },
    },
    {
        "name": BOOLEAN_OPERATION,
        "description": (
            "Combine two solids. cut subtracts the tool object from the base object, fuse "
            "unites them, common keeps their intersection. Both operands are consumed."
        ),
        "inputSchema": {
            "type": "object",
            "properties": {
                "base_object_name": _identifier("Base solid."),
                "tool_object_name": _identifier("Tool solid."),
                "operation": {"type": "string", "enum": ["cut", "fuse", "common"]},
                "name": _identifier("Unique name of the resulting solid."),
            },
            "required": ["base_object_name", "tool_object_name", "operation", "name"],
        },
    },
    {
        "name": MULTIPLE_FUSE,
        "description": "Fuse two or more solids into one. All operands are consumed.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "object_names": {
                    "type": "array",
                    "items": _identifier("Solid name."),
                    "minItems": 2,
                },
                "name": _identifier("Unique name of the resulting solid."),
            },
            "required": ["object_names", "name"],
        },
    },
)


def tools_list() -> list[dict[str, Any]]:
    """tools/list 的结果；顺序与内容固定。"""
    return [dict(d) for d in TOOL_DESCRIPTORS]
