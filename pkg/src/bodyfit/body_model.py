"""Parametric body mesh V(beta, theta, t).

Shape blendshapes deform a template linearly, a joint regressor places the
skeleton on the shaped mesh, and linear blend skinning applies per-joint
axis-angle rotations composed along the kinematic tree. The analytic
Jacobian of every posed vertex with respect to the flat parameter vector
``[beta, theta.ravel(), t]`` is available from :func:`pose_vertices`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .geometry import TriangleMesh, axis_index

FORMAT = "bodymodel/1"
GENDERS = ("male", "female", "neutral")
REQUIRED_GROUPS = ("feet", "chest_region", "waist_region", "hip_region", "head_top")


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


_BASIS_SKEW = np.stack([skew(e) for e in np.eye(3)])


def rodrigues(r) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (exponential map)."""
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r)
    k = skew(r)
    if angle < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    return (np.eye(3) + np.sin(angle) / angle * k
            + (1.0 - np.cos(angle)) / angle ** 2 * k @ k)


def rodrigues_derivative(r) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(R, dR)`` with ``dR[c] = dR / dr_c``.

    Uses the closed form of Gallego and Yezzi for the derivative of the
    exponential map, with a second-order expansion near the identity.
    """
    r = np.asarray(r, dtype=np.float64)
    R = rodrigues(r)
    n2 = float(r @ r)
    if n2 < 1e-16:
        k = skew(r)
        dR = np.stack([_BASIS_SKEW[c] + 0.5 * (_BASIS_SKEW[c] @ k + k @ _BASIS_SKEW[c])
                       for c in range(3)])
        return R, dR
    k = skew(r)
    i_minus_r = np.eye(3) - R
    dR = np.empty((3, 3, 3))
    for c in range(3):
        m = r[c] * k + skew(np.cross(r, i_minus_r[:, c]))
        dR[c] = m / n2 @ R
    return R, dR


@dataclass(eq=False)
class BodyParams:
    beta: np.ndarray
    theta: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @classmethod
    def zeros(cls, model: "BodyModel") -> "BodyParams":
        return cls(np.zeros(model.n_betas), np.zeros((model.n_joints, 3)), np.zeros(3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.theta.ravel(), self.t])

    @classmethod
    def from_vector(cls, vec, n_betas: int, n_joints: int) -> "BodyParams":
        vec = np.asarray(vec, dtype=np.float64)
        if len(vec) != n_betas + 3 * n_joints + 3:
            raise ValueError("parameter vector has the wrong length")
        return cls(vec[:n_betas], vec[n_betas:n_betas + 3 * n_joints], vec[-3:])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.to_vector()).all())

    def is_canonical(self) -> bool:
        return bool((np.linalg.norm(self.theta, axis=1) < np.pi).all())

    def copy(self) -> "BodyParams":
        return BodyParams(self.beta.copy(), self.theta.copy(), self.t.copy())

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "theta": self.theta.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d) -> "BodyParams":
        try:
            return cls(d["beta"], d["theta"], d["t"])
        except KeyError as exc:
            raise SchemaError(f"params: missing field {exc.args[0]!r}") from None


@dataclass(eq=False)
class BodyModel:
    template: TriangleMesh
    shape_dirs: np.ndarray
    joint_regressor: np.ndarray
    parents: np.ndarray
    skin_weights: np.ndarray
    vertex_groups: dict
    pose_prior: np.ndarray
    up_axis: str = "y"
    gender: str = "neutral"
    template_pose: str = "A-pose"
    joint_names: list = field(default_factory=list)
    shape_names: list = field(default_factory=list)
    torso_joints: list = field(default_factory=list)

    def __post_init__(self):
        n_v = self.template.n_vertices
        self.shape_dirs = np.asarray(self.shape_dirs, dtype=np.float64).reshape(-1, n_v, 3)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=np.float64)
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.pose_prior = np.asarray(self.pose_prior, dtype=np.float64).reshape(-1, 3)
        self.vertex_groups = {k: np.asarray(v, dtype=np.int64).reshape(-1)
                              for k, v in self.vertex_groups.items()}
        self.torso_joints = [int(j) for j in self.torso_joints]
        if not self.joint_names:
            self.joint_names = [f"joint{j}" for j in range(len(self.parents))]
        if not self.shape_names:
            self.shape_names = [f"beta{k}" for k in range(len(self.shape_dirs))]
        self.validate()
        self._subtree = self._subtree_masks()

    @property
    def n_vertices(self) -> int:
        return self.template.n_vertices

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_betas(self) -> int:
        return len(self.shape_dirs)

    @property
    def n_params(self) -> int:
        return self.n_betas + 3 * self.n_joints + 3

    @property
    def up(self) -> int:
        return axis_index(self.up_axis)

    def validate(self):
        n_v, k = self.n_vertices, self.n_joints
        if k < 1:
            raise SchemaError("parents: at least one joint required")
        if self.joint_regressor.shape != (k, n_v):
            raise SchemaError(f"joint_regressor: expected shape {(k, n_v)}, "
                              f"got {self.joint_regressor.shape}")
        if self.skin_weights.shape != (n_v, k):
            raise SchemaError(f"skin_weights: expected shape {(n_v, k)}, "
                              f"got {self.skin_weights.shape}")
        if self.pose_prior.shape != (k, 3):
            raise SchemaError(f"pose_prior: expected shape {(k, 3)}, got {self.pose_prior.shape}")
        if len(self.joint_names) != k:
            raise SchemaError("joint_names: length must match parents")
        if len(self.shape_names) != self.n_betas:
            raise SchemaError("shape_names: length must match shape_dirs")
        if self.parents[0] != -1 or (self.parents[1:] < 0).any():
            raise SchemaError("kinematic tree: joint 0 must be the only root")
        if (self.parents[1:] >= np.arange(1, k)).any():
            raise SchemaError("kinematic tree: parents must precede their children")
        neg = np.flatnonzero((self.skin_weights < 0).any(axis=1))
        if len(neg):
            raise SchemaError(f"skin weights row {int(neg[0])} has a negative entry")
        bad = np.flatnonzero(np.abs(self.skin_weights.sum(axis=1) - 1.0) > 1e-6)
        if len(bad):
            raise SchemaError(f"skin weights row {int(bad[0])} does not sum to 1")
        for name, idx in self.vertex_groups.items():
            if len(idx) and (idx.min() < 0 or idx.max() >= n_v):
                raise SchemaError(f"vertex_groups.{name}: index out of range")
        for j in self.torso_joints:
            if not 0 <= j < k:
                raise SchemaError("torso_joints: index out of range")
        for arr, name in ((self.shape_dirs, "shape_dirs"), (self.joint_regressor, "joint_regressor"),
                          (self.skin_weights, "skin_weights"), (self.pose_prior, "pose_prior")):
            if not np.isfinite(arr).all():
                raise SchemaError(f"{name}: values must be finite")
        if self.gender not in GENDERS:
            raise SchemaError(f"gender: expected one of {GENDERS}, got {self.gender!r}")
        axis_index(self.up_axis)

    def _subtree_masks(self) -> np.ndarray:
        k = self.n_joints
        mask = np.eye(k, dtype=bool)
        for j in range(k - 1, 0, -1):
            mask[self.parents[j]] |= mask[j]
        return mask

    def group(self, name: str) -> np.ndarray:
        try:
            return self.vertex_groups[name]
        except KeyError:
            raise SchemaError(f"vertex_groups: model has no {name!r} group") from None

    def prior_params(self) -> BodyParams:
        return BodyParams(np.zeros(self.n_betas), self.pose_prior.copy(), np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, BodyModel):
            return NotImplemented
        return (self.template == other.template
                and np.array_equal(self.shape_dirs, other.shape_dirs)
                and np.array_equal(self.joint_regressor, other.joint_regressor)
                and np.array_equal(self.parents, other.parents)
                and np.array_equal(self.skin_weights, other.skin_weights)
                and np.array_equal(self.pose_prior, other.pose_prior)
                and self.vertex_groups.keys() == other.vertex_groups.keys()
                and all(np.array_equal(v, other.vertex_groups[k])
                        for k, v in self.vertex_groups.items())
                and (self.up_axis, self.gender, self.template_pose, self.joint_names,
                     self.shape_names, self.torso_joints)
                == (other.up_axis, other.gender, other.template_pose, other.joint_names,
                    other.shape_names, other.torso_joints))


def _check_beta(model: BodyModel, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if len(beta) != model.n_betas:
        raise ValueError(f"expected {model.n_betas} shape coefficients, got {len(beta)}")
    return beta


def shaped_vertices(model: BodyModel, beta) -> np.ndarray:
    beta = _check_beta(model, beta)
    return model.template.vertices + np.tensordot(beta, model.shape_dirs, axes=1)


def shape_mesh(model: BodyModel, beta) -> TriangleMesh:
    return model.template.copy_with(shaped_vertices(model, beta))


def _forward_kinematics(model, joints, rotations):
    """Global rotation A_j and posed joint position b_j of every joint."""
    k = model.n_joints
    A = np.empty((k, 3, 3))
    b = np.empty((k, 3))
    A[0] = rotations[0]
    b[0] = joints[0]
    for j in range(1, k):
        p = model.parents[j]
        A[j] = A[p] @ rotations[j]
        b[j] = A[p] @ (joints[j] - joints[p]) + b[p]
    return A, b


def pose_vertices(model: BodyModel, params: BodyParams, jacobian: bool = False):
    """Posed vertices, optionally with their Jacobian ``(N_v, 3, n_params)``."""
    if not params.is_finite():
        raise ValueError("body parameters must be finite")
    if params.theta.shape != (model.n_joints, 3):
        raise ValueError(f"expected theta of shape {(model.n_joints, 3)}")
    vs = shaped_vertices(model, params.beta)
    joints = model.joint_regressor @ vs
    k = model.n_joints
    if jacobian:
        rd = [rodrigues_derivative(r) for r in params.theta]
        rotations = np.stack([x[0] for x in rd])
    else:
        rotations = np.stack([rodrigues(r) for r in params.theta])
    A, b = _forward_kinematics(model, joints, rotations)

    W = model.skin_weights
    # per-joint skinned position M_j(v) = A_j (v - J_j) + b_j
    offs = b - np.einsum("kab,kb->ka", A, joints)
    blend_rot = (W @ A.reshape(k, 9)).reshape(-1, 3, 3)
    blend_off = W @ offs
    verts = np.einsum("nab,nb->na", blend_rot, vs) + blend_off + params.t
    if not jacobian:
        return verts

    n_v, nb = model.n_vertices, model.n_betas
    J = np.zeros((n_v, 3, model.n_params))
    for c in range(nb):
        d_vs = model.shape_dirs[c]
        d_joints = model.joint_regressor @ d_vs
        d_b = np.empty((k, 3))
        d_b[0] = d_joints[0]
        for j in range(1, k):
            p = model.parents[j]
            d_b[j] = d_b[p] + A[p] @ (d_joints[j] - d_joints[p])
        d_off = d_b - np.einsum("kab,kb->ka", A, d_joints)
        J[:, :, c] = np.einsum("nab,nb->na", blend_rot, d_vs) + W @ d_off

    per_joint = np.einsum("kab,nb->nka", A, vs) + offs[None]
    for jk in range(k):
        sub = model._subtree[jk]
        w_sub = W[:, sub]
        x = np.einsum("nk,nka->na", w_sub, per_joint[:, sub]) - w_sub.sum(axis=1)[:, None] * b[jk]
        a_p = A[model.parents[jk]] if jk > 0 else np.eye(3)
        R, dR = rd[jk]
        for c in range(3):
            omega = a_p @ dR[c] @ R.T @ a_p.T
            J[:, :, nb + 3 * jk + c] = x @ omega.T
    J[:, :, -3:] = np.eye(3)
    return verts, J


def posed_joints(model: BodyModel, params: BodyParams) -> np.ndarray:
    vs = shaped_vertices(model, params.beta)
    joints = model.joint_regressor @ vs
    rotations = np.stack([rodrigues(r) for r in params.theta])
    _, b = _forward_kinematics(model, joints, rotations)
    return b + params.t


def pose_mesh(model: BodyModel, params: BodyParams) -> TriangleMesh:
    return model.template.copy_with(pose_vertices(model, params))


def torso_face_mask(model: BodyModel, threshold: float = 0.5) -> np.ndarray:
    """Faces whose three vertices carry more than ``threshold`` torso skin weight."""
    if not model.torso_joints:
        return np.ones(len(model.template.faces), dtype=bool)
    torso = model.skin_weights[:, model.torso_joints].sum(axis=1) > threshold
    return torso[model.template.faces].all(axis=1)


# ---------------------------------------------------------------- file format

def model_to_dict(model: BodyModel) -> dict:
    rows, cols = np.nonzero(model.joint_regressor)
    return {
        "format": FORMAT,
        "gender": model.gender,
        "up_axis": model.up_axis,
        "template_pose": model.template_pose,
        "vertices": model.template.vertices.tolist(),
        "faces": model.template.faces.tolist(),
        "shape_names": list(model.shape_names),
        "shape_dirs": model.shape_dirs.tolist(),
        "joint_names": list(model.joint_names),
        "parents": model.parents.tolist(),
        "joint_regressor": {
            "rows": rows.tolist(),
            "cols": cols.tolist(),
            "values": model.joint_regressor[rows, cols].tolist(),
        },
        "skin_weights": model.skin_weights.tolist(),
        "vertex_groups": {k: v.tolist() for k, v in sorted(model.vertex_groups.items())},
        "pose_prior": model.pose_prior.tolist(),
        "torso_joints": list(model.torso_joints),
    }


def _field(doc, key, path=""):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise SchemaError(f"{path}{key}: missing field") from None


def _numeric(value, path, shape=None, dtype=np.float64):
    try:
        arr = np.asarray(value, dtype=dtype)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected a numeric array") from None
    if shape is not None:
        if arr.ndim != len(shape) or any(s is not None and s != a for s, a in zip(shape, arr.shape)):
            raise SchemaError(f"{path}: expected shape {shape}, got {arr.shape}")
    return arr


def model_from_dict(doc) -> BodyModel:
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    fmt = doc.get("format")
    if fmt != FORMAT:
        raise SchemaError(f"format: expected {FORMAT!r}, got {fmt!r}")
    verts = _numeric(_field(doc, "vertices"), "vertices", (None, 3))
    faces = _numeric(_field(doc, "faces"), "faces", (None, 3), np.int64)
    n_v = len(verts)
    parents = _numeric(_field(doc, "parents"), "parents", (None,), np.int64)
    k = len(parents)
    shape_dirs = _numeric(_field(doc, "shape_dirs"), "shape_dirs")
    if shape_dirs.size == 0:
        shape_dirs = shape_dirs.reshape(0, n_v, 3)
    elif shape_dirs.ndim != 3 or shape_dirs.shape[1:] != (n_v, 3):
        raise SchemaError(f"shape_dirs: expected shape (B, {n_v}, 3), got {shape_dirs.shape}")
    reg = _field(doc, "joint_regressor")
    rows = _numeric(_field(reg, "rows", "joint_regressor."), "joint_regressor.rows", (None,), np.int64)
    cols = _numeric(_field(reg, "cols", "joint_regressor."), "joint_regressor.cols", (None,), np.int64)
    vals = _numeric(_field(reg, "values", "joint_regressor."), "joint_regressor.values", (None,))
    if not len(rows) == len(cols) == len(vals):
        raise SchemaError("joint_regressor: rows, cols and values differ in length")
    if len(rows) and (rows.min() < 0 or rows.max() >= k or cols.min() < 0 or cols.max() >= n_v):
        raise SchemaError("joint_regressor: index out of range")
    regressor = np.zeros((k, n_v))
    regressor[rows, cols] = vals
    skin = _numeric(_field(doc, "skin_weights"), "skin_weights", (n_v, k))
    groups_doc = _field(doc, "vertex_groups")
    if not isinstance(groups_doc, dict):
        raise SchemaError("vertex_groups: expected an object")
    groups = {name: _numeric(idx, f"vertex_groups.{name}", (None,), np.int64)
              for name, idx in groups_doc.items()}
    missing = [g for g in REQUIRED_GROUPS if g not in groups]
    if missing:
        raise SchemaError(f"vertex_groups.{missing[0]}: missing group")
    prior = _numeric(_field(doc, "pose_prior"), "pose_prior", (k, 3))
    try:
        template = TriangleMesh(verts, faces)
    except ValueError as exc:
        raise SchemaError(f"vertices/faces: {exc}") from None
    return BodyModel(
        template=template,
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        parents=parents,
        skin_weights=skin,
        vertex_groups=groups,
        pose_prior=prior,
        up_axis=doc.get("up_axis", "y"),
        gender=doc.get("gender", "neutral"),
        template_pose=doc.get("template_pose", "A-pose"),
        joint_names=list(doc.get("joint_names", [])),
        shape_names=list(doc.get("shape_names", [])),
        torso_joints=list(doc.get("torso_joints", [])),
    )


def save_model(model: BodyModel, path):
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> BodyModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None
    return model_from_dict(doc)
