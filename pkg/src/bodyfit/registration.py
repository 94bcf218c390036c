"""Fit body parameters to a surface point cloud.

The objective is a visibility-weighted Chamfer energy plus a foot-ground
penalty (and an optional pose-prior penalty), minimised with Adam over
``[beta, theta, t]``. Visibility weights come from the squared cosine
between posed vertex normals and the panel normals and are refreshed
periodically, staying constant in between.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .body_model import BodyModel, BodyParams, pose_vertices
from .errors import NonFiniteEnergy
from .geometry import NearestNeighborIndex, TriangleMesh, vertex_normals
from .pointcloud import PointCloud

log = logging.getLogger(__name__)

DEFAULT_PANEL_NORMALS = ((0.0, 0.0, 1.0), (0.0, 0.0, -1.0))
IMPROVEMENT_TOL = 1e-9


@dataclass
class FitConfig:
    lambda_chamfer: float = 1.0
    lambda_ground: float = 0.5
    lambda_pose: float = 0.0
    lambda_shape: float = 0.0
    learning_rate: float = 0.001
    max_iters: int = 700
    patience: int = 20
    weight_refresh_period: int = 50
    y_ground: float = 0.0
    panel_normals: tuple = DEFAULT_PANEL_NORMALS
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        self.panel_normals = tuple(tuple(float(c) for c in n) for n in self.panel_normals)
        for name in ("lambda_chamfer", "lambda_ground", "lambda_pose", "lambda_shape"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.weight_refresh_period < 1:
            raise ValueError("weight_refresh_period must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError("optimizer must be 'adam' or 'gd'")
        if not self.panel_normals:
            raise ValueError("at least one panel normal is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["panel_normals"] = [list(n) for n in self.panel_normals]
        return d

    @classmethod
    def from_dict(cls, d) -> "FitConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fit config field(s): {sorted(unknown)}")
        return cls(**d)


def visibility_weights(normals, panel_normals) -> np.ndarray:
    """Per-vertex weight ``max_panel (n_i . n_panel)^2``."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(panel_normals, dtype=np.float64).reshape(-1, 3)
    for arr, what in ((n, "vertex normal"), (p, "panel normal")):
        off = np.abs(np.linalg.norm(arr, axis=1) - 1.0) > 1e-6
        if off.any():
            raise ValueError(f"{what} {int(np.flatnonzero(off)[0])} is not unit length")
    return np.clip(np.max((n @ p.T) ** 2, axis=1), 0.0, 1.0)


@dataclass
class Correspondences:
    """Nearest cloud point per vertex and nearest vertex per cloud point."""

    vertex_to_point: np.ndarray
    point_to_vertex: np.ndarray

    def __eq__(self, other):
        return (np.array_equal(self.vertex_to_point, other.vertex_to_point)
                and np.array_equal(self.point_to_vertex, other.point_to_vertex))


def find_correspondences(vertices, cloud_points, cloud_index=None) -> Correspondences:
    if cloud_index is None:
        cloud_index = NearestNeighborIndex(cloud_points)
    fwd, _ = cloud_index.query_many(vertices)
    bwd, _ = NearestNeighborIndex(vertices).query_many(cloud_points)
    return Correspondences(fwd, bwd)


def chamfer_terms(vertices, weights, cloud_points, corr: Correspondences):
    """Forward term, backward term and vertex gradient for fixed correspondences."""
    v = np.asarray(vertices, dtype=np.float64)
    p = np.asarray(cloud_points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n_v, n_p = len(v), len(p)
    d_fwd = v - p[corr.vertex_to_point]
    d_bwd = p - v[corr.point_to_vertex]
    forward = float(np.sum(w * np.sum(d_fwd * d_fwd, axis=1))) / n_v
    backward = float(np.sum(d_bwd * d_bwd)) / n_p
    grad = (2.0 / n_v) * w[:, None] * d_fwd
    np.add.at(grad, corr.point_to_vertex, (-2.0 / n_p) * d_bwd)
    return forward, backward, grad


def chamfer_energy(mesh_vertices, weights, cloud, nn_index_cloud=None, nn_index_vertices=None):
    """Weighted Chamfer energy and its gradient with respect to the vertices.

    The forward (vertex to cloud) term is weighted by ``weights`` and
    averaged over vertices; the backward term is unweighted and averaged
    over cloud points. Nearest neighbours are held fixed when
    differentiating.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    verts = np.asarray(mesh_vertices, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cloud is empty")
    if len(weights) != len(verts):
        raise ValueError("weights length must equal the vertex count")
    if nn_index_cloud is None:
        nn_index_cloud = NearestNeighborIndex(pts)
    if nn_index_vertices is None:
        nn_index_vertices = NearestNeighborIndex(verts)
    fwd, _ = nn_index_cloud.query_many(verts)
    bwd, _ = nn_index_vertices.query_many(pts)
    forward, backward, grad = chamfer_terms(verts, weights, pts, Correspondences(fwd, bwd))
    return forward + backward, grad


def ground_energy(mesh_vertices, foot_indices, y_ground: float = 0.0, up_axis: int = 1):
    """Mean squared deviation of foot vertices from the ground height."""
    foot = np.asarray(foot_indices, dtype=np.int64)
    if len(foot) == 0:
        raise ValueError("foot vertex set is empty")
    v = np.asarray(mesh_vertices, dtype=np.float64)
    dev = v[foot, up_axis] - y_ground
    energy = float(np.mean(dev * dev))
    grad = np.zeros_like(v)
    np.add.at(grad[:, up_axis], foot, 2.0 * dev / len(foot))
    return energy, grad


@dataclass
class Evaluation:
    total: float
    gradient: np.ndarray | None
    terms: dict
    raw_terms: dict
    correspondences: Correspondences
    vertices: np.ndarray


class Objective:
    """Total energy over the flat parameter vector for one model and cloud."""

    def __init__(self, model: BodyModel, cloud: PointCloud, config: FitConfig):
        if len(cloud) == 0:
            raise ValueError("cloud is empty")
        self.model = model
        self.cloud = cloud
        self.config = config
        self.cloud_index = NearestNeighborIndex(cloud.points)
        self.feet = model.group("feet")
        self.prior = model.pose_prior.ravel()

    def params(self, vec) -> BodyParams:
        return BodyParams.from_vector(vec, self.model.n_betas, self.model.n_joints)

    def _posed(self, params, jacobian=False):
        out = pose_vertices(self.model, params, jacobian=jacobian)
        verts = out[0] if jacobian else out
        if not np.isfinite(verts).all():
            raise NonFiniteEnergy("posed vertices are not finite", params=params.to_dict())
        return out

    def weights_at(self, params: BodyParams) -> np.ndarray:
        verts = self._posed(params)
        normals = vertex_normals(TriangleMesh(verts, self.model.template.faces))
        return visibility_weights(normals, self.config.panel_normals)

    def evaluate(self, params: BodyParams, weights, gradient: bool = True,
                 correspondences: Correspondences | None = None) -> Evaluation:
        cfg = self.config
        m = self.model
        if gradient:
            verts, jac = self._posed(params, jacobian=True)
        else:
            verts = self._posed(params)
        pts = self.cloud.points
        corr = correspondences or find_correspondences(verts, pts, self.cloud_index)
        fwd, bwd, g_cham = chamfer_terms(verts, weights, pts, corr)
        e_ground, g_ground = ground_energy(verts, self.feet, cfg.y_ground, m.up)
        theta_dev = params.theta.ravel() - self.prior
        e_pose = float(theta_dev @ theta_dev)
        e_shape = float(params.beta @ params.beta)
        terms = {
            "chamfer": cfg.lambda_chamfer * (fwd + bwd),
            "ground": cfg.lambda_ground * e_ground,
            "pose": cfg.lambda_pose * e_pose,
            "shape": cfg.lambda_shape * e_shape,
        }
        raw = {"chamfer_forward": fwd, "chamfer_backward": bwd, "ground": e_ground,
               "pose": e_pose, "shape": e_shape}
        total = terms["chamfer"] + terms["ground"] + terms["pose"] + terms["shape"]
        grad = None
        if gradient:
            g_verts = cfg.lambda_chamfer * g_cham + cfg.lambda_ground * g_ground
            grad = np.einsum("nc,ncp->p", g_verts, jac)
            nb, nj = m.n_betas, m.n_joints
            grad[:nb] += 2.0 * cfg.lambda_shape * params.beta
            grad[nb:nb + 3 * nj] += 2.0 * cfg.lambda_pose * theta_dev
        return Evaluation(total, grad, terms, raw, corr, verts)


def total_energy(params: BodyParams, model: BodyModel, cloud: PointCloud, weights,
                 config: FitConfig | None = None):
    """``(E_total, dE_total/d[beta, theta, t])`` with weights held constant."""
    ev = Objective(model, cloud, config or FitConfig()).evaluate(params, weights)
    return ev.total, ev.gradient


def rigid_init(model: BodyModel, cloud: PointCloud, config: FitConfig | None = None) -> BodyParams:
    """Prior pose, zero shape, translated onto the cloud.

    Horizontal translation matches the vertex centroid to the cloud
    centroid; the vertical one puts the lowest foot vertex on the ground.
    The subject is assumed to face the front panel, so no yaw is applied.
    """
    config = config or FitConfig()
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    params = model.prior_params()
    verts = pose_vertices(model, params)
    up = model.up
    t = cloud.points.mean(axis=0) - verts.mean(axis=0)
    t[up] = config.y_ground - verts[model.group("feet"), up].min()
    params.t = t
    return params


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x, g):
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class GradientDescent:
    def __init__(self, lr):
        self.lr = lr

    def step(self, x, g):
        return x - self.lr * g


@dataclass
class FitResult:
    params: BodyParams
    final_energy: float
    terms: dict
    raw_terms: dict
    iterations_run: int
    converged_by: str
    energy_trace: list
    best_trace: list = field(default_factory=list)
    best_iteration: int = 0
    weight_refresh_iters: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "final_energy": self.final_energy,
            "terms": dict(self.terms),
            "raw_terms": dict(self.raw_terms),
            "iterations_run": self.iterations_run,
            "converged_by": self.converged_by,
            "best_iteration": self.best_iteration,
            "weight_refresh_iters": list(self.weight_refresh_iters),
            "energy_trace": list(self.energy_trace),
        }


def fit(model: BodyModel, cloud: PointCloud, config: FitConfig | None = None,
        init: BodyParams | None = None) -> FitResult:
    """Minimise the total energy from :func:`rigid_init` (or ``init``).

    Stops after ``patience`` consecutive iterations without a decrease of
    the best energy by more than 1e-9, or after ``max_iters``. Returns the
    best parameters seen.
    """
    config = config or FitConfig()
    obj = Objective(model, cloud, config)
    params = init.copy() if init is not None else rigid_init(model, cloud, config)
    x = params.to_vector()
    if config.optimizer == "adam":
        opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    else:
        opt = GradientDescent(config.learning_rate)

    trace, best_trace, refreshes = [], [], []
    best_e, best_x, best_ev, best_k = np.inf, x.copy(), None, 0
    stale = 0
    converged_by = "max_iters"
    weights = None
    for k in range(config.max_iters):
        p = obj.params(x)
        if not p.is_finite():
            raise NonFiniteEnergy(f"non-finite parameters at iteration {k}", k, p.to_dict())
        try:
            with np.errstate(all="ignore"):
                if k % config.weight_refresh_period == 0:
                    weights = obj.weights_at(p)
                    refreshes.append(k)
                ev = obj.evaluate(p, weights)
        except NonFiniteEnergy as exc:
            raise NonFiniteEnergy(f"{exc} at iteration {k}", k, p.to_dict()) from None
        if not np.isfinite(ev.total) or not np.isfinite(ev.gradient).all():
            raise NonFiniteEnergy(
                f"non-finite energy at iteration {k}: params={p.to_dict()}", k, p.to_dict())
        trace.append(ev.total)
        stale = 0 if ev.total < best_e - IMPROVEMENT_TOL else stale + 1
        if ev.total < best_e:
            best_e, best_x, best_ev, best_k = ev.total, x.copy(), ev, k
        best_trace.append(best_e)
        if stale >= config.patience:
            converged_by = "patience"
            break
        x = opt.step(x, ev.gradient)
    log.debug("fit stopped after %d iterations (%s), best %.6g at %d",
              len(trace), converged_by, best_e, best_k)
    return FitResult(
        params=obj.params(best_x),
        final_energy=float(best_e),
        terms={k: float(v) for k, v in best_ev.terms.items()},
        raw_terms={k: float(v) for k, v in best_ev.raw_terms.items()},
        iterations_run=len(trace),
        converged_by=converged_by,
        energy_trace=[float(e) for e in trace],
        best_trace=[float(e) for e in best_trace],
        best_iteration=best_k,
        weight_refresh_iters=refreshes,
    )
