"""A small deterministic humanoid in the body-model format.

Built from closed elliptical tubes (torso, head, two arms, two legs) in an
A-pose, y up, facing +z, soles on y = 0 and head top at :data:`HEIGHT`.
Twelve joints, four shape modes: overall scale and three torso girths.
"""

from __future__ import annotations

import numpy as np

from .body_model import BodyModel
from .geometry import TriangleMesh

HEIGHT = 1.75
ARM_ANGLE = np.deg2rad(35.0)

JOINT_NAMES = [
    "pelvis", "spine", "chest", "head",
    "l_shoulder", "l_elbow", "r_shoulder", "r_elbow",
    "l_hip", "l_knee", "r_hip", "r_knee",
]
PARENTS = [-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10]
TORSO_JOINTS = [0, 1, 2]
SHAPE_NAMES = ["scale", "torso_girth", "hip_girth", "chest_girth"]

# torso bottom/top heights and girth bump centres (y, sigma)
TORSO_Y = (0.80, 1.50)
HIP_BUMP = (0.96, 0.05)
WAIST_BUMP = (1.10, 0.05)
CHEST_BUMP = (1.32, 0.06)
# relative radial growth of a girth mode per unit coefficient
GIRTH_GAIN = 0.15

REGIONS = {
    "hip_region": (0.90, 1.02),
    "waist_region": (1.03, 1.17),
    "chest_region": (1.22, 1.40),
}


def _bump(y, centre, sigma):
    return np.exp(-0.5 * ((y - centre) / sigma) ** 2)


def _smoothstep(a, b, y):
    s = np.clip((y - a) / (b - a), 0.0, 1.0)
    return s * s * (3 - 2 * s)


def torso_half_axes(y):
    """Lateral and depth half-widths of the torso cross-section at height y."""
    y = np.asarray(y, dtype=np.float64)
    taper = 1.0 - 0.35 * _smoothstep(1.40, 1.50, y)
    a = (0.150 + 0.025 * _bump(y, *HIP_BUMP) - 0.015 * _bump(y, *WAIST_BUMP)
         + 0.020 * _bump(y, *CHEST_BUMP)) * taper
    b = (0.105 + 0.015 * _bump(y, *HIP_BUMP) - 0.010 * _bump(y, *WAIST_BUMP)
         + 0.015 * _bump(y, *CHEST_BUMP)) * taper
    return a, b


class _Builder:
    def __init__(self):
        self.verts: list = []
        self.faces: list = []
        self.weights: list = []
        self.part: list = []

    def tube(self, centres, u, v, ra, rb, n_seg, weights, part, cap_weights):
        """Closed tube of elliptical rings; returns (ring index lists, caps)."""
        base = len(self.verts)
        n_rings = len(centres)
        phi = 2 * np.pi * np.arange(n_seg) / n_seg
        rings = []
        for i in range(n_rings):
            ring = []
            for p in phi:
                self.verts.append(centres[i] + ra[i] * np.cos(p) * u[i] + rb[i] * np.sin(p) * v[i])
                self.weights.append(weights[i])
                self.part.append(part)
                ring.append(len(self.verts) - 1)
            rings.append(ring)
        first_face = len(self.faces)
        for i in range(n_rings - 1):
            for s in range(n_seg):
                a = rings[i][s]
                b = rings[i][(s + 1) % n_seg]
                c = rings[i + 1][(s + 1) % n_seg]
                d = rings[i + 1][s]
                self.faces.append((a, c, b))
                self.faces.append((a, d, c))
        caps = []
        for end, ring, sign in ((0, rings[0], -1), (n_rings - 1, rings[-1], 1)):
            self.verts.append(np.asarray(centres[end], dtype=np.float64))
            self.weights.append(cap_weights[0 if end == 0 else 1])
            self.part.append(part)
            ci = len(self.verts) - 1
            caps.append(ci)
            for s in range(n_seg):
                a, b = ring[s], ring[(s + 1) % n_seg]
                self.faces.append((ci, b, a) if sign < 0 else (ci, a, b))
        self._orient_outward(first_face)
        return rings, caps, base

    def _orient_outward(self, first_face):
        """Flip the tube's faces if its signed volume is negative."""
        f = np.array(self.faces[first_face:])
        v = np.array(self.verts)
        centre = v[np.unique(f)].mean(axis=0)
        a, b, c = (v[f[:, k]] - centre for k in range(3))
        if np.einsum("ij,ij->", a, np.cross(b, c)) < 0:
            self.faces[first_face:] = [(i, k, j) for i, j, k in self.faces[first_face:]]


def _onehot(k, n=len(JOINT_NAMES)):
    w = np.zeros(n)
    w[k] = 1.0
    return w


def _blend(pairs, y):
    """Piecewise-linear blend of joint weights keyed by a scalar coordinate."""
    keys = [p[0] for p in pairs]
    w = np.zeros(len(JOINT_NAMES))
    if y <= keys[0]:
        return _onehot(pairs[0][1])
    if y >= keys[-1]:
        return _onehot(pairs[-1][1])
    for (y0, j0), (y1, j1) in zip(pairs[:-1], pairs[1:]):
        if y0 <= y <= y1:
            s = (y - y0) / (y1 - y0)
            w[j0] += 1 - s
            w[j1] += s
            return w
    raise AssertionError("unreachable")


def _refine(keys, radii, k):
    """Insert ``k`` linearly interpolated rings between consecutive rings."""
    if k == 0:
        return np.asarray(keys, float), np.asarray(radii, float), np.arange(len(keys))
    t = np.arange(len(keys) - 1)[:, None] + np.arange(k + 1)[None, :] / (k + 1)
    t = np.append(t.ravel(), len(keys) - 1)
    idx = np.arange(len(keys)) * (k + 1)
    grid = np.arange(len(keys))
    return np.interp(t, grid, keys), np.interp(t, grid, radii), idx


def synthetic_model(torso_segments: int = 48, torso_rings: int = 20,
                    limb_segments: int = 10, head_segments: int = 12,
                    limb_subdiv: int = 1) -> BodyModel:
    """Build the built-in humanoid. Deterministic: no randomness involved.

    Most vertices go around the torso circumference, where the measured
    curvature is. ``limb_subdiv`` inserts interpolated rings along the limbs.
    """
    bld = _Builder()
    ex = np.array([1.0, 0.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    joint_rings: dict = {}

    # torso: vertical elliptical rings
    ty = np.linspace(TORSO_Y[0], TORSO_Y[1], torso_rings)
    ta, tb = torso_half_axes(ty)
    tw = [_blend([(0.95, 0), (1.10, 1), (1.30, 2)], y) for y in ty]
    t_rings, _, _ = bld.tube(
        [np.array([0.0, y, 0.0]) for y in ty], [ez] * len(ty), [ex] * len(ty),
        tb, ta, torso_segments, tw, "torso", (tw[0], tw[-1]))
    ring_of = lambda ys, y: int(np.argmin(np.abs(ys - y)))
    joint_rings[0] = t_rings[ring_of(ty, 0.95)]
    joint_rings[1] = t_rings[ring_of(ty, 1.10)]
    joint_rings[2] = t_rings[ring_of(ty, 1.30)]

    # head and neck; the top cap vertex sits at HEIGHT
    hy = np.array([1.46, 1.53, 1.58, 1.63, 1.68, 1.72])
    hr = np.array([0.055, 0.055, 0.080, 0.095, 0.088, 0.060])
    hw = [_blend([(1.50, 2), (1.56, 3)], y) for y in hy]
    h_rings, h_caps, _ = bld.tube(
        [np.array([0.0, y, 0.0]) for y in hy], [ez] * len(hy), [ex] * len(hy),
        hr * 1.05, hr, head_segments, hw, "head", (hw[0], _onehot(3)))
    bld.verts[h_caps[1]] = np.array([0.0, HEIGHT, 0.0])
    joint_rings[3] = h_rings[1]

    # arms, hanging down and out at ARM_ANGLE from vertical; ring 3 is the elbow
    arm_s = np.array([0.0, 0.12, 0.24, 0.30, 0.36, 0.47, 0.57])
    arm_r = np.array([0.050, 0.045, 0.040, 0.038, 0.036, 0.031, 0.028])
    arm_s, arm_r, arm_key = _refine(arm_s, arm_r, limb_subdiv)
    for side, (j_sh, j_el) in ((1.0, (4, 5)), (-1.0, (6, 7))):
        shoulder = np.array([0.19 * side, 1.44, 0.0])
        axis = np.array([np.sin(ARM_ANGLE) * side, -np.cos(ARM_ANGLE), 0.0])
        centres = [shoulder + si * axis for si in arm_s]
        v_dir = np.cross(ez, axis)
        w = [_blend([(0.24, j_sh), (0.36, j_el)], si) for si in arm_s]
        a_rings, _, _ = bld.tube(centres, [ez] * len(arm_s), [v_dir] * len(arm_s), arm_r, arm_r,
                                 limb_segments, w, "arm", (w[0], w[-1]))
        joint_rings[j_sh] = a_rings[0]
        joint_rings[j_el] = a_rings[arm_key[3]]

    # legs, vertical, soles on y = 0; ring 3 is the knee
    leg_y = np.array([0.84, 0.74, 0.60, 0.48, 0.36, 0.22, 0.09, 0.04, 0.0])
    leg_r = np.array([0.075, 0.068, 0.060, 0.054, 0.057, 0.048, 0.040, 0.046, 0.048])
    leg_y, leg_r, leg_key = _refine(leg_y, leg_r, limb_subdiv)
    for side, (j_hip, j_knee) in ((1.0, (8, 9)), (-1.0, (10, 11))):
        centres = [np.array([0.085 * side, y, 0.0]) for y in leg_y]
        w = [_blend([(0.42, j_knee), (0.54, j_hip)], y) for y in leg_y]
        l_rings, l_caps, _ = bld.tube(centres, [ex] * len(leg_y), [ez] * len(leg_y), leg_r, leg_r,
                                      limb_segments, w, "leg", (w[0], w[-1]))
        joint_rings[j_hip] = l_rings[0]
        joint_rings[j_knee] = l_rings[leg_key[3]]
        joint_rings.setdefault("feet", []).extend(l_rings[-1] + [l_caps[1]])

    verts = np.array(bld.verts)
    faces = np.array(bld.faces, dtype=np.int64)
    weights = np.array(bld.weights)
    n_v = len(verts)

    regressor = np.zeros((len(JOINT_NAMES), n_v))
    for j in range(len(JOINT_NAMES)):
        ring = joint_rings[j]
        regressor[j, ring] = 1.0 / len(ring)

    part = np.array(bld.part)
    torso = part == "torso"
    shape_dirs = np.zeros((4, n_v, 3))
    shape_dirs[0] = verts
    radial = verts * np.array([1.0, 0.0, 1.0])
    for mode, bump in ((1, WAIST_BUMP), (2, HIP_BUMP), (3, CHEST_BUMP)):
        shape_dirs[mode][torso] = GIRTH_GAIN * radial[torso] * _bump(verts[torso, 1], *bump)[:, None]

    torso_idx = np.flatnonzero(torso)
    groups = {"feet": np.array(sorted(joint_rings["feet"])),
              "head_top": np.array([h_caps[1]])}
    for name, (lo, hi) in REGIONS.items():
        ys = verts[torso_idx, 1]
        groups[name] = torso_idx[(ys >= lo) & (ys <= hi)]

    return BodyModel(
        template=TriangleMesh(verts, faces),
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        parents=np.array(PARENTS),
        skin_weights=weights,
        vertex_groups=groups,
        pose_prior=np.zeros((len(JOINT_NAMES), 3)),
        up_axis="y",
        gender="neutral",
        template_pose="A-pose",
        joint_names=list(JOINT_NAMES),
        shape_names=list(SHAPE_NAMES),
        torso_joints=list(TORSO_JOINTS),
    )
