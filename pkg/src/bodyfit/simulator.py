"""Synthetic panel scans of a known mesh.

Points are sampled on the surface, thinned by a visibility law
``|n_f . n_panel|^exponent`` (best panel), random dropout and ray
occlusion, then perturbed with Gaussian noise. :func:`simulate_volume`
instead rasterises first-hit depths into per-panel reflectivity volumes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import RigidTransform, TriangleMesh, face_areas, face_normals
from .pointcloud import PointCloud, ReflectivityVolume


@dataclass
class ScanConfig:
    panel_ids: tuple = ("front", "back")
    panel_normals: tuple = ((0.0, 0.0, 1.0), (0.0, 0.0, -1.0))
    visibility_exponent: float = 2.0
    dropout: float = 0.0
    noise_sigma: float = 0.0
    samples_per_area: float = 20000.0
    occlusion: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        self.panel_ids = tuple(str(p) for p in self.panel_ids)
        self.panel_normals = tuple(tuple(float(c) for c in n) for n in self.panel_normals)
        if len(self.panel_ids) != len(self.panel_normals):
            raise ValueError("panel_ids and panel_normals differ in length")
        for n in self.panel_normals:
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise ValueError("panel normals must be unit vectors")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.samples_per_area > 0:
            raise ValueError("samples_per_area must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["panel_ids"] = list(self.panel_ids)
        d["panel_normals"] = [list(n) for n in self.panel_normals]
        return d

    @classmethod
    def from_dict(cls, d) -> "ScanConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scan config field(s): {sorted(unknown)}")
        return cls(**d)


def panel_pose(normal, up=(0.0, 1.0, 0.0), corner=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Pose of a panel looking along ``-normal``, local y as close to ``up`` as possible.

    Local axes: x = column, y = row, z = depth into the scene.
    """
    z = -np.asarray(normal, dtype=np.float64)
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    y = up - (up @ z) * z
    if np.linalg.norm(y) < 1e-9:
        y = np.array([0.0, 0.0, 1.0]) - z[2] * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return RigidTransform(np.column_stack([x, y, z]), corner)


@dataclass
class ScanInfo:
    """Per-sample bookkeeping from :func:`simulate_scan`."""

    samples: np.ndarray
    face_index: np.ndarray
    keep_probability: np.ndarray
    visible: np.ndarray
    survived_dropout: np.ndarray
    unoccluded: np.ndarray
    kept: np.ndarray


def sample_surface(mesh: TriangleMesh, samples_per_area: float, seed: int):
    """Stratified area-weighted samples; each face draws from its own sub-seed.

    Returns samples, their face indices and a per-sample uniform pair
    ``(u_keep, u_dropout)`` plus a standard normal triple for noise, all
    drawn from the face's generator so the result is independent of
    evaluation order.
    """
    areas = face_areas(mesh)
    if not areas.sum() > 0:
        raise ValueError("mesh has zero total area")
    v = mesh.vertices
    pts, fidx, unif, gauss = [], [], [], []
    for f, (a, b, c) in enumerate(mesh.faces):
        rng = np.random.default_rng([seed, f])
        expected = areas[f] * samples_per_area
        n = int(expected) + int(rng.random() < expected - int(expected))
        if n == 0:
            continue
        r = rng.random((n, 2))
        s = np.sqrt(r[:, :1])
        p = (1 - s) * v[a] + s * (1 - r[:, 1:]) * v[b] + s * r[:, 1:] * v[c]
        pts.append(p)
        fidx.append(np.full(n, f))
        unif.append(rng.random((n, 2)))
        gauss.append(rng.standard_normal((n, 3)))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros((0, 3))
    return (np.concatenate(pts), np.concatenate(fidx).astype(np.int64),
            np.concatenate(unif), np.concatenate(gauss))


def ray_hits(mesh: TriangleMesh, origins, direction, exclude_faces=None,
             eps: float = 1e-9, chunk: int = 256) -> np.ndarray:
    """Whether each ray ``origin + s * direction`` (s > eps) hits any face.

    Moller-Trumbore against every triangle, chunked over rays.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(direction, dtype=np.float64)
    v = mesh.vertices
    f = mesh.faces
    v0 = v[f[:, 0]]
    e1 = v[f[:, 1]] - v0
    e2 = v[f[:, 2]] - v0
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-15
    v0, e1, e2, pvec, det = v0[ok], e1[ok], e2[ok], pvec[ok], det[ok]
    face_ids = np.flatnonzero(ok)
    inv = 1.0 / det
    out = np.zeros(len(o), dtype=bool)
    for start in range(0, len(o), chunk):
        oc = o[start:start + chunk]
        tvec = oc[:, None, :] - v0[None]
        u = np.einsum("rfj,fj->rf", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        w = np.einsum("j,rfj->rf", d, qvec) * inv
        s = np.einsum("rfj,fj->rf", qvec, e2) * inv
        hit = (u >= 0) & (w >= 0) & (u + w <= 1) & (s > eps)
        if exclude_faces is not None:
            hit &= face_ids[None, :] != np.asarray(exclude_faces)[start:start + chunk, None]
        out[start:start + chunk] = hit.any(axis=1)
    return out


def simulate_scan(mesh: TriangleMesh, config: ScanConfig | None = None, return_info: bool = False):
    config = config or ScanConfig()
    samples, fidx, unif, gauss = sample_surface(mesh, config.samples_per_area, config.rng_seed)
    normals = face_normals(mesh)
    panels = np.asarray(config.panel_normals, dtype=np.float64)
    cos = np.abs(normals[fidx] @ panels.T)
    per_panel = cos ** config.visibility_exponent
    keep_p = per_panel.max(axis=1) if len(samples) else np.zeros(0)
    visible = unif[:, 0] < keep_p
    survived = visible & (unif[:, 1] >= config.dropout)

    unoccluded = np.ones(len(samples), dtype=bool)
    # best unoccluded panel per sample, for the source tag
    best = np.full(len(samples), -1)
    if config.occlusion and survived.any():
        cand = np.flatnonzero(survived)
        clear = np.zeros((len(cand), len(panels)), dtype=bool)
        for k, n in enumerate(panels):
            clear[:, k] = ~ray_hits(mesh, samples[cand], n, exclude_faces=fidx[cand])
        unoccluded[cand] = clear.any(axis=1)
        score = np.where(clear, per_panel[cand], -1.0)
        best[cand] = np.argmax(score, axis=1)
    elif len(samples):
        best = np.argmax(per_panel, axis=1)
    kept = survived & unoccluded

    pts = samples[kept] + config.noise_sigma * gauss[kept]
    tags = np.asarray(config.panel_ids)[best[kept]] if kept.any() else np.zeros(0, dtype=str)
    cloud = PointCloud(pts, tags)
    if return_info:
        return cloud, ScanInfo(samples, fidx, keep_p, visible, survived, unoccluded, kept)
    return cloud


def _rasterize_first_hit(local_verts, faces, n_cols, n_rows, spacing):
    """Per-pixel minimum depth of the mesh along local +z (NaN where uncovered)."""
    zbuf = np.full((n_rows, n_cols), np.inf)
    tri = local_verts[faces]
    for t in tri:
        xy = t[:, :2] / spacing
        c0 = max(int(np.ceil(xy[:, 0].min())), 0)
        c1 = min(int(np.floor(xy[:, 0].max())), n_cols - 1)
        r0 = max(int(np.ceil(xy[:, 1].min())), 0)
        r1 = min(int(np.floor(xy[:, 1].max())), n_rows - 1)
        if c0 > c1 or r0 > r1:
            continue
        cc, rr = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        px = np.column_stack([cc.ravel(), rr.ravel()]).astype(np.float64)
        a, b, c = xy
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if abs(det) < 1e-14:
            continue
        l1 = ((px[:, 0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (px[:, 1] - a[1])) / det
        l2 = ((b[0] - a[0]) * (px[:, 1] - a[1]) - (px[:, 0] - a[0]) * (b[1] - a[1])) / det
        l0 = 1 - l1 - l2
        tol = -1e-12
        inside = (l0 >= tol) & (l1 >= tol) & (l2 >= tol)
        if not inside.any():
            continue
        z = l0 * t[0, 2] + l1 * t[1, 2] + l2 * t[2, 2]
        ri = rr.ravel()[inside]
        ci = cc.ravel()[inside]
        np.minimum.at(zbuf, (ri, ci), z[inside])
    zbuf[np.isinf(zbuf)] = np.nan
    return zbuf


def simulate_volume(mesh: TriangleMesh, config: ScanConfig | None = None,
                    voxel_spacing: float = 0.01, margin: float | None = None,
                    poses=None, dims=None) -> list[ReflectivityVolume]:
    """One reflectivity volume per panel with a Gaussian bump (sigma = 1 voxel)
    at the first-hit depth of every covered pixel.

    By default each volume is fitted around the mesh with ``margin``
    (3 voxels); pass ``poses`` and ``dims`` to impose a fixed grid, in
    which case a mesh reaching outside it is an error.
    """
    config = config or ScanConfig()
    if not voxel_spacing > 0:
        raise ValueError("voxel_spacing must be > 0")
    s = voxel_spacing
    margin = 3 * s if margin is None else margin
    vols = []
    for k, (pid, normal) in enumerate(zip(config.panel_ids, config.panel_normals)):
        if poses is None:
            rot = panel_pose(normal).rotation
            local = mesh.vertices @ rot
            lo = local.min(axis=0) - margin
            pose = RigidTransform(rot, rot @ lo)
            local = local - lo
            shape = tuple(int(np.ceil((local.max(axis=0)[i] + margin) / s)) + 1 for i in range(3))
        else:
            pose = poses[k]
            shape = tuple(int(x) for x in dims[k])
            local = pose.inverse().apply(mesh.vertices)
            top = (np.asarray(shape) - 1) * s
            if (local < -1e-12).any() or (local > top + 1e-12).any():
                raise ValueError(f"mesh outside volume extent of panel {pid!r}")
        n_cols, n_rows, n_depth = shape
        hit = _rasterize_first_hit(local, mesh.faces, n_cols, n_rows, s)
        k_idx = np.arange(n_depth) * s
        values = np.exp(-0.5 * ((k_idx[None, None, :] - hit[:, :, None]) / s) ** 2)
        values = np.nan_to_num(values, nan=0.0)
        # (row, col, depth) -> grid order (col, row, depth)
        values = np.transpose(values, (1, 0, 2))
        vols.append(ReflectivityVolume(values, (s, s, s), tuple(pose.translation), 2, pose, pid))
    return vols
