"""Turn per-panel reflectivity volumes into one merged surface point cloud.

Pipeline: :func:`extract_depth_map` -> :func:`smooth_depth_map` ->
:func:`project_depth_map` -> :func:`merge_clouds` -> :func:`downsample`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import RigidTransform

MISSING = np.nan
DEFAULT_SPACING = 0.01
DEFAULT_SMOOTH_RADIUS = 1


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    source_panel: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.source_panel is not None:
            self.source_panel = np.asarray(self.source_panel, dtype=str)
            if len(self.source_panel) != len(self.points):
                raise ValueError("source_panel length must match point count")

    def __len__(self):
        return len(self.points)

    def translated(self, delta) -> "PointCloud":
        return PointCloud(self.points + np.asarray(delta, dtype=np.float64), self.source_panel)


@dataclass(eq=False)
class ReflectivityVolume:
    """A reflectivity grid indexed ``values[ix, iy, iz]``.

    ``panel_pose`` maps panel-local coordinates ``(col, row, depth)`` in
    meters, measured from voxel (0, 0, 0), into the scanner frame. Depth
    index 0 is the slice nearest the panel.
    """

    values: np.ndarray
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    depth_axis: int = 2
    panel_pose: RigidTransform | None = None
    panel_id: str = "front"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError("volume must be a non-empty 3D grid")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError("spacing components must be positive")
        self.origin = tuple(float(o) for o in self.origin)
        if self.depth_axis not in (0, 1, 2):
            raise ValueError("depth_axis must be 0, 1 or 2")
        if not np.isfinite(self.values).all():
            raise ValueError("volume values must be finite")
        if self.panel_pose is None:
            self.panel_pose = RigidTransform(self.local_axes_matrix(), self.origin)

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def lateral_axes(self) -> tuple[int, int]:
        """Grid axes used as (column, row) of the depth map.

        Chosen cyclically after the depth axis so (col, row, depth) is a
        right-handed frame.
        """
        return (self.depth_axis + 1) % 3, (self.depth_axis + 2) % 3

    def local_axes_matrix(self) -> np.ndarray:
        """Rotation taking panel-local (col, row, depth) to grid axes."""
        col, row = self.lateral_axes
        m = np.zeros((3, 3))
        m[col, 0] = m[row, 1] = m[self.depth_axis, 2] = 1.0
        return m


@dataclass(eq=False)
class DepthMap:
    depth: np.ndarray
    pixel_spacing: float
    panel_id: str = "front"
    depth_extent: float = field(default=np.inf)

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.depth)


def extract_depth_map(vol: ReflectivityVolume, threshold: float) -> DepthMap:
    """First strict local reflectivity maximum ``>= threshold`` per line.

    Lines run along ``depth_axis`` from index 0 (panel side) inward. A run
    of equal values counts as one maximum located at its first index.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    nd = vol.dims[vol.depth_axis]
    if nd < 3:
        raise ValueError(f"depth axis has {nd} voxels; need at least 3")
    col, row = vol.lateral_axes
    if not np.isclose(vol.spacing[col], vol.spacing[row], rtol=1e-12, atol=0):
        raise ValueError("lateral voxel spacing must be equal")
    v = np.transpose(vol.values, (row, col, vol.depth_axis))

    # value of the nearest differing neighbour on each side, -inf at the ends
    prv = np.empty_like(v)
    nxt = np.empty_like(v)
    prv[..., 0] = -np.inf
    for i in range(1, nd):
        same = v[..., i - 1] == v[..., i]
        prv[..., i] = np.where(same, prv[..., i - 1], v[..., i - 1])
    nxt[..., -1] = -np.inf
    for i in range(nd - 2, -1, -1):
        same = v[..., i + 1] == v[..., i]
        nxt[..., i] = np.where(same, nxt[..., i + 1], v[..., i + 1])
    start = np.ones(v.shape, dtype=bool)
    start[..., 1:] = v[..., 1:] != v[..., :-1]
    cand = start & (v > prv) & (v > nxt) & (v >= threshold)
    # a line that is one constant run has nothing to be greater than
    cand &= ~(np.isinf(prv) & np.isinf(nxt))

    first = np.argmax(cand, axis=-1)
    found = cand.any(axis=-1)
    step = vol.spacing[vol.depth_axis]
    depth = np.where(found, first * step, MISSING)
    return DepthMap(depth, vol.spacing[col], vol.panel_id, (nd - 1) * step)


def smooth_depth_map(dm: DepthMap, radius: int = DEFAULT_SMOOTH_RADIUS) -> DepthMap:
    """Median of the non-missing depths in each (2r+1)^2 window."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or dm.depth.size == 0:
        return DepthMap(dm.depth.copy(), dm.pixel_spacing, dm.panel_id, dm.depth_extent)
    padded = np.pad(dm.depth, radius, constant_values=np.nan)
    win = sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1))
    out = np.full_like(dm.depth, np.nan)
    valid = dm.valid
    if not valid.any():
        return DepthMap(out, dm.pixel_spacing, dm.panel_id, dm.depth_extent)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(win[valid].reshape(int(valid.sum()), -1), axis=1)
    out[valid] = med
    return DepthMap(out, dm.pixel_spacing, dm.panel_id, dm.depth_extent)


def depth_map_local_points(dm: DepthMap) -> np.ndarray:
    r, c = np.nonzero(dm.valid)
    return np.column_stack([c * dm.pixel_spacing, r * dm.pixel_spacing, dm.depth[r, c]])


def project_depth_map(dm: DepthMap, panel_pose: RigidTransform) -> PointCloud:
    local = depth_map_local_points(dm)
    pts = panel_pose.apply(local) if len(local) else local.reshape(0, 3)
    return PointCloud(pts, np.full(len(pts), dm.panel_id))


def merge_clouds(clouds) -> PointCloud:
    clouds = list(clouds)
    if not clouds:
        return PointCloud(np.zeros((0, 3)))
    pts = np.concatenate([c.points for c in clouds], axis=0)
    if all(c.source_panel is None for c in clouds):
        return PointCloud(pts)
    tags = [c.source_panel if c.source_panel is not None else np.full(len(c), "")
            for c in clouds]
    return PointCloud(pts, np.concatenate(tags))


def downsample(cloud: PointCloud, spacing: float = DEFAULT_SPACING) -> PointCloud:
    """Voxel-grid downsampling: one centroid per occupied cell.

    Cells are ``floor(p / spacing)``; output is ordered by cell index, so
    it does not depend on input order beyond floating-point summation.
    """
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    if len(cloud) == 0:
        return PointCloud(np.zeros((0, 3)))
    keys = np.floor(cloud.points / spacing).astype(np.int64)
    cells, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(cells), 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]
    tags = None
    if cloud.source_panel is not None:
        _, first = np.unique(inverse, return_index=True)
        tags = cloud.source_panel[first].astype(object)
        mixed = np.zeros(len(cells), dtype=bool)
        np.logical_or.at(mixed, inverse, cloud.source_panel != cloud.source_panel[first][inverse])
        tags[mixed] = "mixed"
    return PointCloud(centroids, tags)


def ingest(volumes, threshold: float, smooth_radius: int = DEFAULT_SMOOTH_RADIUS,
           spacing: float = DEFAULT_SPACING) -> PointCloud:
    clouds = []
    for vol in volumes:
        dm = smooth_depth_map(extract_depth_map(vol, threshold), smooth_radius)
        clouds.append(project_depth_map(dm, vol.panel_pose))
    return downsample(merge_clouds(clouds), spacing)
