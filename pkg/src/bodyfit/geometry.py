"""Triangle-mesh primitives: normals, exact nearest neighbours, plane
slicing, 2D convex hulls and polygon perimeters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, SliceTooSparse

AXES = {"x": 0, "y": 1, "z": 2}


def axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXES[axis]
        except KeyError:
            raise ValueError(f"unknown axis {axis!r}") from None
    axis = int(axis)
    if axis not in (0, 1, 2):
        raise ValueError(f"unknown axis {axis!r}")
    return axis


def plane_axes(up_axis) -> tuple[int, int]:
    """The two coordinate axes spanning a plane orthogonal to ``up_axis``."""
    up = axis_index(up_axis)
    return tuple(a for a in (0, 1, 2) if a != up)


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if bad.any():
                raise DegenerateGeometryError(
                    f"face {int(np.flatnonzero(bad)[0])} repeats a vertex index")
        if not np.isfinite(self.vertices).all():
            raise ValueError("mesh vertices must be finite")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def copy_with(self, vertices) -> "TriangleMesh":
        return TriangleMesh(vertices, self.faces)

    def __eq__(self, other):
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.faces, other.faces))


def _face_cross(mesh: TriangleMesh) -> np.ndarray:
    v = mesh.vertices
    f = mesh.faces
    v0 = v[f[:, 0]]
    return np.cross(v[f[:, 1]] - v0, v[f[:, 2]] - v0)


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_face_cross(mesh), axis=1)


def face_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit normals of every face, right-hand winding outward."""
    cross = _face_cross(mesh)
    norms = np.linalg.norm(cross, axis=1)
    zero = ~(norms > 0.0)
    if zero.any():
        raise DegenerateGeometryError(f"face {int(np.flatnonzero(zero)[0])} has zero area")
    return cross / norms[:, None]


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted vertex normals.

    Each incident face contributes its unnormalized cross product, whose
    length is twice the face area, so the sum is area weighted.
    """
    cross = _face_cross(mesh)
    acc = np.zeros_like(mesh.vertices)
    counts = np.zeros(mesh.n_vertices, dtype=np.int64)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
        np.add.at(counts, mesh.faces[:, k], 1)
    if (counts == 0).any():
        raise DegenerateGeometryError(
            f"vertex {int(np.flatnonzero(counts == 0)[0])} belongs to no face")
    norms = np.linalg.norm(acc, axis=1)
    zero = ~(norms > 0.0)
    if zero.any():
        raise DegenerateGeometryError(
            f"vertex {int(np.flatnonzero(zero)[0])} has a zero resultant normal")
    return acc / norms[:, None]


class NearestNeighborIndex:
    """Exact nearest-neighbour queries over a fixed point set.

    Backed by a k-d tree. Candidates are re-ranked with the squared
    Euclidean distance computed directly from coordinates, and equal
    distances resolve to the lowest point index.
    """

    _candidates = 8

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def query_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, squared_distances)`` for each query row."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        k = min(self._candidates, len(self.points))
        _, idx = self._tree.query(q, k=k)
        idx = idx.reshape(len(q), k)
        diff = q[:, None, :] - self.points[idx]
        d2 = np.sum(diff * diff, axis=2)
        best = d2.min(axis=1)
        # lowest index among exact ties; the large sentinel masks non-ties
        tied = np.where(d2 == best[:, None], idx, np.iinfo(np.int64).max)
        out = tied.min(axis=1)
        if k < len(self.points):
            # every candidate tied: more equidistant points may exist
            saturated = np.flatnonzero((d2 == best[:, None]).all(axis=1))
            for r in saturated:
                near = self._tree.query_ball_point(q[r], np.sqrt(best[r]) * (1 + 1e-12) + 1e-300)
                near = np.asarray(near, dtype=np.int64)
                dd = np.sum((self.points[near] - q[r]) ** 2, axis=1)
                m = dd.min()
                out[r] = near[dd == m].min()
                best[r] = m
        return out.astype(np.int64), best

    def query(self, q) -> tuple[np.ndarray, float]:
        idx, d2 = self.query_many(np.asarray(q, dtype=np.float64)[None, :])
        return self.points[idx[0]].copy(), float(d2[0])


def build_nn_index(points) -> NearestNeighborIndex:
    if hasattr(points, "points"):
        points = points.points
    return NearestNeighborIndex(points)


def slice_mesh(mesh: TriangleMesh, height: float, up_axis="y", face_mask=None) -> np.ndarray:
    """Intersect the mesh with the plane ``up == height``.

    Returns one 2D point per mesh edge that crosses the plane (edges shared
    by two straddling faces are interpolated once), ordered by edge key,
    in the coordinates of :func:`plane_axes`. A vertex lying exactly on the
    plane counts as above it.
    """
    up = axis_index(up_axis)
    faces = mesh.faces if face_mask is None else mesh.faces[np.asarray(face_mask)]
    if len(faces) == 0:
        return np.zeros((0, 2))
    d = mesh.vertices[:, up] - height
    below = d < 0.0
    nb = below[faces].sum(axis=1)
    faces = faces[(nb > 0) & (nb < 3)]
    if len(faces) == 0:
        return np.zeros((0, 2))
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = edges[below[edges[:, 0]] != below[edges[:, 1]]]
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    # interpolate from the lower vertex index so the result is orientation-free
    ia, ib = edges[:, 0], edges[:, 1]
    s = d[ia] / (d[ia] - d[ib])
    axes = list(plane_axes(up))
    va = mesh.vertices[ia][:, axes]
    vb = mesh.vertices[ib][:, axes]
    return va + s[:, None] * (vb - va)


def _cross2(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise convex hull by Andrew's monotone chain.

    Collinear boundary points and duplicates are dropped; the first vertex
    is the lexicographically smallest point.
    """
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).reshape(-1, 2).tolist())))
    if len(pts) < 3:
        raise SliceTooSparse(f"slice too sparse: {len(pts)} distinct points")
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross2(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross2(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise SliceTooSparse("slice too sparse: all points collinear")
    return np.array(hull)


def perimeter(polygon) -> float:
    poly = np.asarray(polygon, dtype=np.float64)
    if len(poly) < 3:
        raise ValueError("perimeter needs at least 3 vertices")
    edges = np.roll(poly, -1, axis=0) - poly
    return float(np.sum(np.sqrt(np.sum(edges * edges, axis=1))))


@dataclass(eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def yaw(cls, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation by ``angle`` radians about the y axis."""
        c, s = np.cos(angle), np.sin(angle)
        r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        # snap exact multiples of pi/2 so 180 degree yaw is exactly diag(-1, 1, -1)
        r[np.abs(r) < 1e-15] = 0.0
        return cls(r, translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RigidTransform":
        return cls(d["rotation"], d["translation"])
