"""Ordered brick assembly models: ingestion, generation, validation, serialization.

The ingestion format is a small LDraw subset: type-1 lines place parts
(12-number rigid transform), type-3/4 lines give inline triangle/quad
geometry, ``0 STEP`` separates build steps and ``0 !BRICKXAR INFO`` attaches
per-step display metadata.  Coordinates in LDraw files are LDU and are
converted to millimeters at 1 LDU = 0.4 mm on ingestion; everything after
ingestion is millimeters.
"""

from __future__ import annotations

import functools
import importlib.resources
import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .errors import (
    DimensionError,
    EmptyModelError,
    FormatError,
    RigidityError,
    SequenceError,
)
from .geometry import Pose6DoF, nearest_rotation, pose_compose

__all__ = [
    "Mesh",
    "BrickPart",
    "PlacedBrick",
    "StepMetadata",
    "AssemblyModel",
    "OrderReport",
    "parse_ldraw",
    "generate_brick_mesh",
    "validate_step_order",
    "serialize_model",
    "load_model",
]

LDU_MM = 0.4
STUD_PITCH_MM = 8.0
STUD_DIAMETER_MM = 4.8  # 3 LEGO units of 1.6 mm
STUD_HEIGHT_MM = 1.6
STUD_SIDES = 12

_RIGID_TOL = 1e-6

# Common LDraw color codes; anything else falls back to mid gray.
_LDRAW_COLORS = {
    0: (33, 33, 33),
    1: (0, 85, 191),
    2: (35, 120, 65),
    4: (201, 26, 9),
    5: (200, 112, 160),
    7: (155, 161, 157),
    14: (242, 205, 55),
    15: (255, 255, 255),
    71: (160, 165, 169),
    72: (108, 110, 104),
}
_DEFAULT_COLOR = (150, 150, 150)


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh. vertices: (n,3) float64 mm; triangles: (m,3) int32."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def __eq__(self, other):
        return (
            isinstance(other, Mesh)
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
        )

    def bbox(self) -> np.ndarray:
        """(2,3) array of [min, max] corners."""
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])


@dataclass(frozen=True)
class BrickPart:
    part_id: str
    color_rgb: tuple[int, int, int]
    mesh: Mesh

    def __post_init__(self):
        if self.mesh.triangles.shape[0] == 0:
            raise ValueError("part mesh must be non-empty")
        if not all(0 <= c <= 255 for c in self.color_rgb):
            raise ValueError("color channels must be in [0, 255]")
        object.__setattr__(self, "color_rgb", tuple(int(c) for c in self.color_rgb))

    @property
    def bbox(self) -> np.ndarray:
        return self.mesh.bbox()


@dataclass(frozen=True)
class PlacedBrick:
    part: BrickPart
    placement: Pose6DoF  # part frame -> model frame
    step_index: int

    def world_vertices(self) -> np.ndarray:
        return self.placement.apply(self.part.mesh.vertices)


@dataclass(frozen=True)
class StepMetadata:
    step_index: int
    title: str
    body_text: str
    image_ref: str | None = None


@dataclass(frozen=True)
class AssemblyModel:
    bricks: tuple[PlacedBrick, ...]
    metadata: tuple[StepMetadata, ...] = ()
    marker_anchor: Pose6DoF = field(default_factory=Pose6DoF.identity)

    def __post_init__(self):
        bricks = tuple(self.bricks)
        if not bricks:
            raise EmptyModelError("model has no bricks")
        steps = [b.step_index for b in bricks]
        if sorted(steps) != list(range(1, len(bricks) + 1)):
            raise SequenceError(f"step indices must be exactly 1..{len(bricks)}")
        bricks = tuple(sorted(bricks, key=lambda b: b.step_index))
        valid = {b.step_index for b in bricks}
        for md in self.metadata:
            if md.step_index not in valid:
                raise SequenceError(f"metadata references unknown step {md.step_index}")
        object.__setattr__(self, "bricks", bricks)
        object.__setattr__(self, "metadata", tuple(self.metadata))

    @property
    def final_step(self) -> int:
        return len(self.bricks)

    @functools.cached_property
    def world_placements(self) -> tuple[Pose6DoF, ...]:
        """marker_anchor o placement per brick, in step order.

        Cached: the model is immutable and per-frame rendering needs these
        transforms for every placed brick.
        """
        return tuple(
            pose_compose(self.marker_anchor, b.placement) for b in self.bricks
        )

    @functools.cached_property
    def world_geometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All brick meshes in world frame: (vertices, triangles, tri_step).

        ``tri_step[i]`` is the step index owning triangle ``i``; slicing the
        triangle list by step yields per-step submeshes without per-brick
        transform work every frame.
        """
        verts, tris, tri_step = [], [], []
        offset = 0
        for brick, wp in zip(self.bricks, self.world_placements):
            v = wp.apply(brick.part.mesh.vertices)
            verts.append(v)
            tris.append(brick.part.mesh.triangles + offset)
            tri_step.append(
                np.full(len(brick.part.mesh.triangles), brick.step_index, dtype=np.int32)
            )
            offset += len(v)
        return np.vstack(verts), np.vstack(tris), np.concatenate(tri_step)

    @functools.cached_property
    def _occluder_tris_by_step(self) -> dict[int, np.ndarray]:
        return {}

    def occluder_triangles(self, step: int) -> np.ndarray:
        """World-frame triangles of every brick placed before ``step``."""
        cached = self._occluder_tris_by_step.get(step)
        if cached is None:
            _, tris, tri_step = self.world_geometry
            cached = np.ascontiguousarray(tris[tri_step < step])
            self._occluder_tris_by_step[step] = cached
        return cached

    def metadata_for(self, step_index: int) -> StepMetadata | None:
        for md in self.metadata:
            if md.step_index == step_index:
                return md
        return None


@dataclass(frozen=True)
class OrderReport:
    """Per-model elevation-order report.

    ``bridge_exceptions`` lists step indices whose brick bottom sits below the
    highest bottom elevation of any earlier brick (allowed: bricks hung from a
    bridge above), with the offending elevation pair for each.
    """

    bridge_exceptions: tuple[tuple[int, float, float], ...]

    @property
    def flagged_steps(self) -> tuple[int, ...]:
        return tuple(s for s, _, _ in self.bridge_exceptions)


def generate_brick_mesh(
    studs_w: int, studs_d: int, height_mm: float, pitch_mm: float = STUD_PITCH_MM
) -> BrickPart:
    """Parametric brick: box footprint pitch*studs mm with one stud per cell.

    The part frame has the footprint corner at the origin, z up; the body
    spans z in [0, height_mm] and studs extend 1.6 mm above it.  The default
    pitch is the standard 8 mm; a 16 mm pitch yields large-format bricks
    (stud geometry stays the standard 4.8 mm cylinder either way).
    """
    if studs_w < 1 or studs_d < 1 or height_mm <= 0 or pitch_mm <= 0:
        raise DimensionError(
            f"invalid brick dimensions {studs_w}x{studs_d}x{height_mm}"
        )
    w = pitch_mm * studs_w
    d = pitch_mm * studs_d
    verts: list[np.ndarray] = []
    tris: list[tuple[int, int, int]] = []

    def add_box(x0, y0, z0, x1, y1, z1):
        base = len(verts)
        corners = [
            (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
            (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
        ]
        verts.extend(np.array(c, dtype=float) for c in corners)
        # outward CCW winding per face
        faces = [
            (0, 2, 1), (0, 3, 2),  # bottom (z-)
            (4, 5, 6), (4, 6, 7),  # top (z+)
            (0, 1, 5), (0, 5, 4),  # y-
            (2, 3, 7), (2, 7, 6),  # y+
            (1, 2, 6), (1, 6, 5),  # x+
            (3, 0, 4), (3, 4, 7),  # x-
        ]
        tris.extend((base + a, base + b, base + c) for a, b, c in faces)

    def add_stud(cx, cy, z0):
        base = len(verts)
        r = STUD_DIAMETER_MM / 2.0
        z1 = z0 + STUD_HEIGHT_MM
        ring = [
            (cx + r * math.cos(2 * math.pi * i / STUD_SIDES),
             cy + r * math.sin(2 * math.pi * i / STUD_SIDES))
            for i in range(STUD_SIDES)
        ]
        for x, y in ring:
            verts.append(np.array([x, y, z0]))
        for x, y in ring:
            verts.append(np.array([x, y, z1]))
        verts.append(np.array([cx, cy, z0]))  # bottom center
        verts.append(np.array([cx, cy, z1]))  # top center
        cb = base + 2 * STUD_SIDES
        ct = cb + 1
        for i in range(STUD_SIDES):
            j = (i + 1) % STUD_SIDES
            b0, b1 = base + i, base + j
            t0, t1 = base + STUD_SIDES + i, base + STUD_SIDES + j
            tris.append((b0, b1, t1))
            tris.append((b0, t1, t0))
            tris.append((cb, b1, b0))   # bottom cap faces down
            tris.append((ct, t0, t1))   # top cap faces up

    add_box(0.0, 0.0, 0.0, w, d, height_mm)
    for i in range(studs_w):
        for j in range(studs_d):
            add_stud((i + 0.5) * pitch_mm, (j + 0.5) * pitch_mm, height_mm)

    mesh = Mesh(np.array(verts), np.array(tris, dtype=np.int32))
    return BrickPart(
        part_id=f"brick_{studs_w}x{studs_d}x{height_mm:g}",
        color_rgb=_DEFAULT_COLOR,
        mesh=mesh,
    )


def _parse_parametric(name: str) -> tuple[int, int, float] | None:
    if not name.startswith("brick_"):
        return None
    parts = name[len("brick_"):].split("x")
    if len(parts) != 3:
        return None
    try:
        return int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        return None


def _rigid_from_ldraw(nums: list[float]) -> Pose6DoF:
    t = np.array(nums[0:3]) * LDU_MM
    m = np.array(
        [[nums[3], nums[4], nums[5]],
         [nums[6], nums[7], nums[8]],
         [nums[9], nums[10], nums[11]]]
    )
    r = nearest_rotation(m)
    if np.max(np.abs(m - r)) > _RIGID_TOL:
        raise RigidityError(f"placement matrix is not rigid: {m.tolist()}")
    return Pose6DoF(r, t)


def parse_ldraw(text: str) -> AssemblyModel:
    """Parse the LDraw subset into an :class:`AssemblyModel`.

    Inline sub-files are introduced MPD-style with ``0 FILE <name>`` and may
    contain only type-3/4 geometry (one level of nesting).  Part names that
    match ``brick_WxDxH`` (H in mm) are generated parametrically.  Exactly one
    type-1 line is required per STEP block.
    """
    from .errors import UnknownPartError

    lines = text.splitlines()
    # split out inline sub-files
    main: list[str] = []
    subfiles: dict[str, list[str]] = {}
    current: list[str] | None = None
    for raw in lines:
        tokens = raw.split()
        if len(tokens) >= 2 and tokens[0] == "0" and tokens[1] == "FILE":
            name = " ".join(tokens[2:])
            current = subfiles.setdefault(name, [])
            continue
        (main if current is None else current).append(raw)

    inline_parts: dict[str, Mesh] = {}
    for name, body in subfiles.items():
        tri_list: list[list[float]] = []
        for raw in body:
            tokens = raw.split()
            if not tokens:
                continue
            if tokens[0] == "3":
                tri_list.append([float(x) for x in tokens[2:11]])
            elif tokens[0] == "4":
                q = [float(x) for x in tokens[2:14]]
                tri_list.append(q[0:9])
                tri_list.append(q[0:3] + q[6:12])
        if not tri_list:
            raise FormatError(f"inline part {name!r} has no geometry")
        verts = np.array(tri_list, dtype=float).reshape(-1, 3) * LDU_MM
        tris = np.arange(len(verts), dtype=np.int32).reshape(-1, 3)
        inline_parts[name] = Mesh(verts, tris)

    parts_cache: dict[tuple[str, tuple[int, int, int]], BrickPart] = {}

    def resolve_part(name: str, color: tuple[int, int, int]) -> BrickPart:
        key = (name, color)
        if key not in parts_cache:
            if name in inline_parts:
                parts_cache[key] = BrickPart(name, color, inline_parts[name])
            else:
                dims = _parse_parametric(name)
                if dims is None:
                    raise UnknownPartError(f"unknown part {name!r}")
                generated = generate_brick_mesh(*dims)
                parts_cache[key] = BrickPart(name, color, generated.mesh)
        return parts_cache[key]

    bricks: list[PlacedBrick] = []
    metadata: list[StepMetadata] = []
    step = 1
    brick_in_block = False
    for raw in main:
        tokens = raw.split()
        if not tokens:
            continue
        if tokens[0] == "0":
            if len(tokens) >= 2 and tokens[1] == "STEP":
                if not brick_in_block:
                    raise SequenceError(f"STEP block {step} contains no brick")
                step += 1
                brick_in_block = False
            elif len(tokens) >= 3 and tokens[1] == "!BRICKXAR" and tokens[2] == "INFO":
                rest = raw.split(None, 3)[3]
                idx_str, _, text_part = rest.partition(" ")
                title, _, body = text_part.partition("|")
                metadata.append(
                    StepMetadata(int(idx_str), title.strip(), body.strip())
                )
            continue
        if tokens[0] == "1":
            if brick_in_block:
                raise SequenceError(f"two bricks in STEP block {step}")
            color = _LDRAW_COLORS.get(int(tokens[1]), _DEFAULT_COLOR)
            nums = [float(x) for x in tokens[2:14]]
            name = " ".join(tokens[14:])
            placement = _rigid_from_ldraw(nums)
            bricks.append(PlacedBrick(resolve_part(name, color), placement, step))
            brick_in_block = True
        # type 3/4 lines outside sub-files are ignored in the main file

    if not bricks:
        raise EmptyModelError("no bricks in input")
    return AssemblyModel(bricks=tuple(bricks), metadata=tuple(metadata))


def brick_bottom_elevation(brick: PlacedBrick) -> float:
    return float(brick.world_vertices()[:, 2].min())


def validate_step_order(model: AssemblyModel) -> OrderReport:
    """Flag steps whose brick bottom is below the running max of earlier bottoms.

    Flags are the bridge exception (a brick hung from above); they are
    informational, never errors.
    """
    flags: list[tuple[int, float, float]] = []
    running_max = -math.inf
    for brick in model.bricks:
        bottom = brick_bottom_elevation(brick)
        if bottom < running_max:
            flags.append((brick.step_index, bottom, running_max))
        running_max = max(running_max, bottom)
    return OrderReport(tuple(flags))


# --- serialization -----------------------------------------------------------

_SCHEMA = None


def _schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        ref = importlib.resources.files("brickxar").joinpath("model.schema.json")
        _SCHEMA = json.loads(ref.read_text())
    return _SCHEMA


def _pose_to_json(p: Pose6DoF) -> dict:
    return {
        "rotation": [float(x) for x in p.rotation.reshape(-1)],
        "translation": [float(x) for x in p.translation],
    }


def _pose_from_json(d: dict) -> Pose6DoF:
    r = nearest_rotation(np.array(d["rotation"], dtype=float).reshape(3, 3))
    return Pose6DoF(r, np.array(d["translation"], dtype=float))


def serialize_model(model: AssemblyModel) -> bytes:
    """Canonical UTF-8 JSON; deterministic bytes for structurally equal models."""
    parts: dict[str, dict] = {}
    part_keys: dict[int, str] = {}
    for brick in model.bricks:
        if id(brick.part) not in part_keys:
            key = f"{brick.part.part_id}#{len(parts)}"
            part_keys[id(brick.part)] = key
            parts[key] = {
                "color_rgb": list(brick.part.color_rgb),
                "part_id": brick.part.part_id,
                "triangles": [int(i) for i in brick.part.mesh.triangles.reshape(-1)],
                "vertices": [float(x) for x in brick.part.mesh.vertices.reshape(-1)],
            }
    doc = {
        "bricks": [
            {
                "part": part_keys[id(b.part)],
                "placement": _pose_to_json(b.placement),
                "step_index": b.step_index,
            }
            for b in model.bricks
        ],
        "final_step": model.final_step,
        "format": "brickxar-model/1",
        "marker_anchor": _pose_to_json(model.marker_anchor),
        "parts": parts,
    }
    if model.metadata:
        doc["metadata"] = [
            {
                "body_text": m.body_text,
                "image_ref": m.image_ref,
                "step_index": m.step_index,
                "title": m.title,
            }
            for m in model.metadata
        ]
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes) -> AssemblyModel:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"not a JSON model document: {exc}") from exc
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise FormatError(f"schema violation: {exc.message}") from exc
    parts: dict[str, BrickPart] = {}
    for key, pd in doc["parts"].items():
        verts = np.array(pd["vertices"], dtype=float).reshape(-1, 3)
        tris = np.array(pd["triangles"], dtype=np.int32).reshape(-1, 3)
        parts[key] = BrickPart(pd["part_id"], tuple(pd["color_rgb"]), Mesh(verts, tris))
    bricks = tuple(
        PlacedBrick(parts[bd["part"]], _pose_from_json(bd["placement"]), bd["step_index"])
        for bd in doc["bricks"]
    )
    metadata = tuple(
        StepMetadata(m["step_index"], m["title"], m["body_text"], m.get("image_ref"))
        for m in doc.get("metadata", [])
    )
    model = AssemblyModel(
        bricks=bricks,
        metadata=metadata,
        marker_anchor=_pose_from_json(doc["marker_anchor"]),
    )
    if model.final_step != doc["final_step"]:
        raise FormatError("final_step does not match brick count")
    return model
