"""测试用的几何构造函数。"""

from __future__ import annotations

from typing import Sequence

from cadgym.services.geometry_kernel import Circle, Leaf, Line, build_sketch, extrude, make_frame


def rect_lines(x0: float, y0: float, x1: float, y1: float) -> list[Line]:
    return [
        Line((x0, y0), (x1, y0)),
        Line((x1, y0), (x1, y1)),
        Line((x1, y1), (x0, y1)),
        Line((x0, y1), (x0, y0)),
    ]


def box(lo: Sequence[float], hi: Sequence[float], name: str = "Box") -> Leaf:
    frame = make_frame(f"CS_{name}", (0.0, 0.0, lo[2]), (0.0, 0.0, 0.0))
    sketch = build_sketch(f"Sk_{name}", frame, rect_lines(lo[0], lo[1], hi[0], hi[1]))
    return Leaf(extrude(sketch, hi[2] - lo[2]))


def cylinder(center: Sequence[float], radius: float, z0: float, height: float, name: str = "Cyl") -> Leaf:
    frame = make_frame(f"CS_{name}", (0.0, 0.0, z0), (0.0, 0.0, 0.0))
    sketch = build_sketch(f"Sk_{name}", frame, [Circle(tuple(center), radius)])
    return Leaf(extrude(sketch, height))
