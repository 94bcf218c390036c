"""Tape-like circumferences and body height from a body mesh.

A circumference is the perimeter of the convex hull of a horizontal
slice; slices step by ``slice_step`` through the height range spanned by
a region's vertices and the max (chest, hip) or min (waist) is reported.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .body_model import BodyModel, BodyParams, pose_vertices, torso_face_mask
from .errors import DegenerateGeometryError, NoMeasurableSlice, SchemaError
from .geometry import TriangleMesh, axis_index, convex_hull_2d, perimeter, slice_mesh

DEFAULT_SLICE_STEP = 0.0025
STANDARD_MEASURES = (("chest", "chest_region", "max"),
                     ("waist", "waist_region", "min"),
                     ("hip", "hip_region", "max"))
POSE_NOTE = "re-posed to the model pose prior (A-pose), feet on the ground"


@dataclass
class MeasurementSpec:
    name: str
    region: np.ndarray
    mode: str = "max"
    slice_step: float = DEFAULT_SLICE_STEP

    def __post_init__(self):
        self.region = np.asarray(self.region, dtype=np.int64).reshape(-1)
        if len(self.region) == 0:
            raise ValueError(f"{self.name}: region is empty")
        if self.mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        if not self.slice_step > 0:
            raise ValueError("slice_step must be > 0")


@dataclass
class Circumference:
    value: float
    height: float
    n_points: int
    n_slices: int
    h_min: float
    h_max: float

    def __iter__(self):
        # allows ``c, h = circumference(...)``
        return iter((self.value, self.height))


def region_bounds(mesh: TriangleMesh, region, up_axis="y") -> tuple[float, float]:
    region = np.asarray(region, dtype=np.int64)
    if len(region) == 0:
        raise ValueError("region is empty")
    h = mesh.vertices[region, axis_index(up_axis)]
    return float(h.min()), float(h.max())


def slice_heights(h_min: float, h_max: float, step: float) -> np.ndarray:
    n = int(np.floor((h_max - h_min) / step + 1e-9))
    return h_min + step * np.arange(n + 1)


def slice_perimeter(mesh: TriangleMesh, height: float, up_axis="y", face_mask=None):
    pts = slice_mesh(mesh, height, up_axis, face_mask)
    return perimeter(convex_hull_2d(pts)), len(pts)


def circumference(mesh: TriangleMesh, spec: MeasurementSpec, up_axis="y",
                  face_mask=None) -> Circumference:
    h_min, h_max = region_bounds(mesh, spec.region, up_axis)
    best = None
    for h in slice_heights(h_min, h_max, spec.slice_step):
        try:
            c, n = slice_perimeter(mesh, h, up_axis, face_mask)
        except DegenerateGeometryError:
            continue
        better = (best is None or (c > best[0] if spec.mode == "max" else c < best[0]))
        if better:
            best = (c, float(h), n)
    if best is None:
        raise NoMeasurableSlice(f"{spec.name}: region produced no measurable slice")
    n_slices = len(slice_heights(h_min, h_max, spec.slice_step))
    return Circumference(best[0], best[1], best[2], n_slices, h_min, h_max)


def body_height(mesh: TriangleMesh, model: BodyModel, y_ground: float = 0.0) -> float:
    top = model.group("head_top")
    if len(top) == 0:
        raise SchemaError("vertex_groups.head_top: group is empty")
    return float(mesh.vertices[top, model.up].max() - y_ground)


def measurement_mesh(model: BodyModel, beta, y_ground: float = 0.0) -> TriangleMesh:
    """Shape ``beta`` in the prior pose, centred at the origin horizontally,
    lowest foot vertex on the ground."""
    params = BodyParams(beta, model.pose_prior, np.zeros(3))
    verts = pose_vertices(model, params)
    verts[:, model.up] += y_ground - verts[model.group("feet"), model.up].min()
    return model.template.copy_with(verts)


@dataclass
class MeasurementReport:
    measures: dict
    body_height: float
    gender: str
    slice_step: float
    pose: str = POSE_NOTE
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {name: m.value for name, m in self.measures.items()}
        out["height"] = self.body_height
        return {
            **out,
            "details": {
                name: {"value_m": m.value, "height_m": m.height, "slice_points": m.n_points,
                       "slices": m.n_slices, "h_min": m.h_min, "h_max": m.h_max}
                for name, m in self.measures.items()
            },
            "gender": self.gender,
            "slice_step": self.slice_step,
            "pose": self.pose,
            "diagnostics": self.diagnostics,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value_m", "height_m", "slices"])
        for name, m in self.measures.items():
            w.writerow([name, repr(m.value), repr(m.height), m.n_slices])
        w.writerow(["height", repr(self.body_height), "", ""])
        return buf.getvalue()


def measure_mesh(mesh: TriangleMesh, model: BodyModel, y_ground: float = 0.0,
                 slice_step: float = DEFAULT_SLICE_STEP, diagnostics=None) -> MeasurementReport:
    """Measure a mesh that shares the model's topology, as posed."""
    mask = torso_face_mask(model)
    measures = {}
    for name, group, mode in STANDARD_MEASURES:
        spec = MeasurementSpec(name, model.group(group), mode, slice_step)
        measures[name] = circumference(mesh, spec, model.up_axis, mask)
    return MeasurementReport(measures, body_height(mesh, model, y_ground), model.gender,
                             slice_step, diagnostics=dict(diagnostics or {}))


def measure_all(model: BodyModel, params: BodyParams, y_ground: float = 0.0,
                slice_step: float = DEFAULT_SLICE_STEP, diagnostics=None) -> MeasurementReport:
    """Re-pose the fitted shape in the prior pose and measure chest, waist,
    hip and height. The fitted pose and translation are discarded."""
    mesh = measurement_mesh(model, params.beta, y_ground)
    return measure_mesh(mesh, model, y_ground, slice_step, diagnostics)
