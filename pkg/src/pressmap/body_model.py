"""Parametric articulated body: procedural toy humanoid, linear blend
skinning, rest-pose anatomical measurements, and mesh neighborhoods.

Axis conventions: rest pose stands along +Y (vertical), faces +Z.  The
posed (bed-frame) mesh lives in a world where the mattress plane is z = 0
with +Z up; the root transform maps rest to bed frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import pmt1
from .errors import (
    ConfigInvalid,
    DegenerateRotation,
    DimensionMismatch,
    IndexOutOfRange,
    MissingRing,
)

N_JOINTS = 24
N_BETA = 10
N_THETA = 69  # 23 joints x 3 axis-angle

# SMPL kinematic tree topology (parent of each of the 24 joints, root = -1)
KINEMATIC_PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int64,
)

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)

PART_NAMES = (
    "head", "spine", "sacrum", "ischium",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_hip", "right_hip",
    "left_heel", "right_heel",
    "left_toes", "right_toes",
)

RING_NAMES = ("chest", "waist", "hips")


@dataclass(frozen=True)
class BodyModel:
    template_vertices: np.ndarray  # (N_v, 3) meters, rest pose
    faces: np.ndarray              # (N_f, 3) vertex indices
    shape_basis: np.ndarray        # (N_v, 3, N_beta)
    joint_regressor: np.ndarray    # (N_j, N_v), rows sum to 1
    skin_weights: np.ndarray       # (N_v, N_j), rows sum to 1
    kinematic_parents: np.ndarray  # (N_j,), root = -1
    part_masks: dict               # name -> sorted vertex index array (14 parts)
    measurement_rings: dict        # name -> ordered vertex loop (chest/waist/hips)
    gender_tag: str                # female | male | neutral
    angle_bounds: np.ndarray       # (23, 3, 2) radians, per-joint sampling bounds

    @property
    def n_vertices(self):
        return self.template_vertices.shape[0]

    @property
    def n_joints(self):
        return self.joint_regressor.shape[0]

    @property
    def n_beta(self):
        return self.shape_basis.shape[2]


@dataclass(frozen=True)
class BodyParams:
    beta: np.ndarray        # (N_beta,)
    theta: np.ndarray       # (N_THETA,) axis-angle radians
    root_trans: np.ndarray  # (3,) meters
    root_rot_x: np.ndarray  # (3,) first 6D rotation axis
    root_rot_y: np.ndarray  # (3,) second 6D rotation axis
    gender: str = "neutral"

    def rot6(self):
        return np.concatenate([self.root_rot_x, self.root_rot_y])

    @staticmethod
    def identity(n_beta=N_BETA, gender="neutral"):
        return BodyParams(
            beta=np.zeros(n_beta),
            theta=np.zeros(N_THETA),
            root_trans=np.zeros(3),
            root_rot_x=np.array([1.0, 0.0, 0.0]),
            root_rot_y=np.array([0.0, 1.0, 0.0]),
            gender=gender,
        )


@dataclass(frozen=True)
class PosedMesh:
    vertices: np.ndarray   # (N_v, 3) meters
    joints: np.ndarray     # (N_j, 3) meters
    source_faces: np.ndarray


@dataclass(frozen=True)
class NeighborTable:
    ring1: list  # per-vertex sorted index arrays, one edge away
    ring2: list  # per-vertex sorted index arrays, one or two edges away


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------


def rot6d_to_matrix(x, y):
    """Gram-Schmidt two 3-vectors into a proper rotation matrix."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx <= 1e-6 or ny <= 1e-6:
        raise DegenerateRotation("6D rotation axis with near-zero norm")
    c1 = x / nx
    y_perp = y - (y @ c1) * c1
    npr = np.linalg.norm(y_perp)
    if npr <= 1e-6 * ny:
        raise DegenerateRotation("6D rotation axes are parallel")
    c2 = y_perp / npr
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def rot6d_graph(rot6):
    """Tape version of :func:`rot6d_to_matrix`. ``rot6``: Tensor (6,)."""
    x = rot6[0:3]
    y = rot6[3:6]
    c1 = x / ad.sqrt(ad.tsum(ad.square(x)))
    proj = ad.tsum(y * c1)
    y_perp = y - proj * c1
    c2 = y_perp / ad.sqrt(ad.tsum(ad.square(y_perp)))
    c3 = _cross_graph(c1, c2)
    return ad.stack([c1, c2, c3], axis=1)


def _cross_graph(a, b):
    return ad.stack(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def rodrigues_graph(theta):
    """Axis-angle triplets to rotation matrices. ``theta``: Tensor (J, 3)."""
    wx, wy, wz = theta[:, 0], theta[:, 1], theta[:, 2]
    s = ad.tsum(ad.square(theta), axis=1)  # squared angles, (J,)
    a = ad.sqrt(s + 1e-24)
    f1 = ad.sin(a) / a
    f2 = (1.0 - ad.cos(a)) / (s + 1e-24)
    zeros = wx * 0.0
    k = ad.stack(
        [
            ad.stack([zeros, -wz, wy], axis=1),
            ad.stack([wz, zeros, -wx], axis=1),
            ad.stack([-wy, wx, zeros], axis=1),
        ],
        axis=1,
    )  # (J, 3, 3)
    kk = ad.matmul(k, k)
    eye = ad.constant(np.broadcast_to(np.eye(3), k.shape).copy())
    f1e = ad.reshape(f1, (-1, 1, 1))
    f2e = ad.reshape(f2, (-1, 1, 1))
    return eye + f1e * k + f2e * kk


# ---------------------------------------------------------------------------
# Posing (linear blend skinning)
# ---------------------------------------------------------------------------


def pose_mesh_graph(model: BodyModel, beta, theta, root_trans, rot6):
    """Differentiable LBS.  All four params are Tensors; returns
    (vertices Tensor (N_v,3), joints Tensor (N_j,3))."""
    n_v = model.n_vertices
    basis2d = ad.constant(model.shape_basis.reshape(n_v * 3, model.n_beta))
    offset = ad.reshape(ad.matmul(basis2d, beta), (n_v, 3))
    v_rest = ad.constant(model.template_vertices) + offset
    j_rest = ad.matmul(ad.constant(model.joint_regressor), v_rest)  # (N_j, 3)

    r_root = rot6d_graph(rot6)
    r_local = rodrigues_graph(ad.reshape(theta, (N_JOINTS - 1, 3)))

    # world transform per joint, stored as (rotation, translation) pairs
    j0 = j_rest[0]
    rot_w = [r_root]
    t_w = [j0 + root_trans - ad.matmul(r_root, j0)]
    parents = model.kinematic_parents
    for j in range(1, model.n_joints):
        p = int(parents[j])
        r_l = r_local[j - 1]
        jj = j_rest[j]
        t_l = jj - ad.matmul(r_l, jj)
        rot_w.append(ad.matmul(rot_w[p], r_l))
        t_w.append(ad.matmul(rot_w[p], t_l) + t_w[p])

    rot_stack = ad.stack(rot_w, axis=0)          # (N_j, 3, 3)
    t_stack = ad.stack(t_w, axis=0)              # (N_j, 3)
    weights = ad.constant(model.skin_weights)    # (N_v, N_j)

    rot_flat = ad.reshape(rot_stack, (model.n_joints, 9))
    blend_rot = ad.reshape(ad.matmul(weights, rot_flat), (n_v, 3, 3))
    blend_t = ad.matmul(weights, t_stack)        # (N_v, 3)

    v_posed = ad.reshape(ad.matmul(blend_rot, ad.reshape(v_rest, (n_v, 3, 1))), (n_v, 3)) + blend_t
    j_posed = ad.reshape(ad.matmul(rot_stack, ad.reshape(j_rest, (model.n_joints, 3, 1))),
                         (model.n_joints, 3)) + t_stack
    return v_posed, j_posed


def pose_mesh(model: BodyModel, params: BodyParams) -> PosedMesh:
    """Pose the model; plain-array front end over :func:`pose_mesh_graph`."""
    _check_params(model, params)
    # validate the root rotation eagerly so errors carry context
    rot6d_to_matrix(params.root_rot_x, params.root_rot_y)
    v, j = pose_mesh_graph(
        model,
        ad.constant(params.beta),
        ad.constant(params.theta),
        ad.constant(params.root_trans),
        ad.constant(params.rot6()),
    )
    return PosedMesh(vertices=v.value, joints=j.value, source_faces=model.faces)


def rest_pose_mesh(model: BodyModel, beta) -> PosedMesh:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (model.n_beta,):
        raise DimensionMismatch(f"beta shape {beta.shape}, expected ({model.n_beta},)")
    params = BodyParams.identity(n_beta=model.n_beta, gender=model.gender_tag)
    params = BodyParams(
        beta=beta,
        theta=params.theta,
        root_trans=params.root_trans,
        root_rot_x=params.root_rot_x,
        root_rot_y=params.root_rot_y,
        gender=model.gender_tag,
    )
    return pose_mesh(model, params)


def _check_params(model: BodyModel, params: BodyParams):
    if params.beta.shape != (model.n_beta,):
        raise DimensionMismatch("beta dimension mismatch")
    if params.theta.shape != (3 * (model.n_joints - 1),):
        raise DimensionMismatch("theta dimension mismatch")
    if params.root_trans.shape != (3,):
        raise DimensionMismatch("root_trans must be a 3-vector")


# ---------------------------------------------------------------------------
# Measurements and neighborhoods
# ---------------------------------------------------------------------------


def anatomical_measurements(mesh: PosedMesh, model: BodyModel) -> dict:
    """Height plus chest/waist/hips circumferences of a rest-pose mesh."""
    v = mesh.vertices
    out = {"height_m": float(v[:, 1].max() - v[:, 1].min())}
    for name in RING_NAMES:
        if name not in model.measurement_rings:
            raise MissingRing(f"measurement ring '{name}' missing from model")
        loop = model.measurement_rings[name]
        pts = v[loop]
        seg = pts - np.roll(pts, 1, axis=0)
        out[f"{name}_m"] = float(np.linalg.norm(seg, axis=1).sum())
    return out


def build_neighbor_table(model: BodyModel) -> NeighborTable:
    n_v = model.n_vertices
    faces = model.faces
    if faces.min() < 0 or faces.max() >= n_v:
        raise IndexOutOfRange("face index out of vertex range")
    ring1 = [set() for _ in range(n_v)]
    for a, b, c in faces:
        ring1[a].update((b, c))
        ring1[b].update((a, c))
        ring1[c].update((a, b))
    ring2 = []
    for i in range(n_v):
        two = set(ring1[i])
        for j in ring1[i]:
            two.update(ring1[j])
        two.discard(i)
        ring2.append(np.array(sorted(two), dtype=np.int64))
    ring1 = [np.array(sorted(s), dtype=np.int64) for s in ring1]
    return NeighborTable(ring1=ring1, ring2=ring2)


# ---------------------------------------------------------------------------
# Procedural toy humanoid
# ---------------------------------------------------------------------------

_RING_SIZE = 6

# rest skeleton, meters (pelvis at origin, arms tucked close to the body)
_SKELETON = {
    "pelvis": (0.0, 0.0, 0.0),
    "left_hip": (0.09, -0.06, 0.0),
    "right_hip": (-0.09, -0.06, 0.0),
    "spine1": (0.0, 0.12, 0.0),
    "left_knee": (0.10, -0.50, 0.0),
    "right_knee": (-0.10, -0.50, 0.0),
    "spine2": (0.0, 0.26, 0.0),
    "left_ankle": (0.11, -0.90, 0.0),
    "right_ankle": (-0.11, -0.90, 0.0),
    "spine3": (0.0, 0.40, 0.0),
    "left_foot": (0.11, -0.97, 0.12),
    "right_foot": (-0.11, -0.97, 0.12),
    "neck": (0.0, 0.55, 0.0),
    "left_collar": (0.07, 0.48, 0.0),
    "right_collar": (-0.07, 0.48, 0.0),
    "head": (0.0, 0.65, 0.0),
    "left_shoulder": (0.18, 0.50, 0.0),
    "right_shoulder": (-0.18, 0.50, 0.0),
    "left_elbow": (0.25, 0.22, 0.0),
    "right_elbow": (-0.25, 0.22, 0.0),
    "left_wrist": (0.28, -0.02, 0.0),
    "right_wrist": (-0.28, -0.02, 0.0),
    "left_hand": (0.29, -0.09, 0.0),
    "right_hand": (-0.29, -0.09, 0.0),
}

# segment: (name, start point, end point, [(t, radius)...], z-ellipticity, ring weight)
_SEGMENTS = [
    ("torso", (0.0, -0.12, 0.0), (0.0, 0.55, 0.0),
     [(0.0, 0.150), (0.35, 0.125), (0.72, 0.148), (1.0, 0.110)], 0.62, 3.0),
    ("head", (0.0, 0.56, 0.0), (0.0, 0.78, 0.0),
     [(0.0, 0.050), (0.3, 0.088), (0.8, 0.088), (1.0, 0.050)], 0.95, 1.6),
    ("left_thigh", "left_hip", "left_knee", [(0.0, 0.080), (1.0, 0.058)], 0.9, 1.0),
    ("right_thigh", "right_hip", "right_knee", [(0.0, 0.080), (1.0, 0.058)], 0.9, 1.0),
    ("left_calf", "left_knee", "left_ankle", [(0.0, 0.055), (1.0, 0.038)], 0.9, 1.0),
    ("right_calf", "right_knee", "right_ankle", [(0.0, 0.055), (1.0, 0.038)], 0.9, 1.0),
    ("left_foot", "left_ankle", (0.11, -1.00, 0.14), [(0.0, 0.040), (1.0, 0.024)], 0.8, 1.0),
    ("right_foot", "right_ankle", (-0.11, -1.00, 0.14), [(0.0, 0.040), (1.0, 0.024)], 0.8, 1.0),
    ("left_upper_arm", "left_shoulder", "left_elbow", [(0.0, 0.046), (1.0, 0.037)], 0.95, 1.0),
    ("right_upper_arm", "right_shoulder", "right_elbow", [(0.0, 0.046), (1.0, 0.037)], 0.95, 1.0),
    ("left_forearm", "left_elbow", "left_wrist", [(0.0, 0.036), (1.0, 0.028)], 0.95, 1.0),
    ("right_forearm", "right_elbow", "right_wrist", [(0.0, 0.036), (1.0, 0.028)], 0.95, 1.0),
    ("left_hand_seg", "left_wrist", (0.30, -0.12, 0.0), [(0.0, 0.026), (1.0, 0.014)], 0.7, 0.8),
    ("right_hand_seg", "right_wrist", (-0.30, -0.12, 0.0), [(0.0, 0.026), (1.0, 0.014)], 0.7, 0.8),
]

# gender-specific radius multipliers by segment name prefix
_GENDER_RADII = {
    "female": {"torso": 1.0, "hips_zone": 1.10, "chest_zone": 0.96, "default": 0.97},
    "male": {"torso": 1.0, "hips_zone": 0.96, "chest_zone": 1.06, "default": 1.03},
    "neutral": {"torso": 1.0, "hips_zone": 1.0, "chest_zone": 1.0, "default": 1.0},
}


def _resolve(p):
    return np.array(_SKELETON[p] if isinstance(p, str) else p, dtype=np.float64)


def _radius_at(profile, t):
    ts = [p[0] for p in profile]
    rs = [p[1] for p in profile]
    return float(np.interp(t, ts, rs))


def generate_toy_model(n_v=690, seed=0, gender="neutral") -> BodyModel:
    """Deterministic capsule-limb humanoid with SMPL tree topology."""
    if n_v < 200:
        raise ConfigInvalid("n_v must be >= 200")
    if gender not in ("female", "male", "neutral"):
        raise ConfigInvalid(f"unknown gender '{gender}'")
    rng = np.random.RandomState(seed)
    k = _RING_SIZE
    total_rings = n_v // k
    rem = n_v % k
    gmul = _GENDER_RADII[gender]

    # ring allocation: proportional with a floor of 3, largest remainder
    lengths = []
    for _, a, b, _, _, w in _SEGMENTS:
        lengths.append(np.linalg.norm(_resolve(b) - _resolve(a)) * w)
    lengths = np.array(lengths)
    raw = lengths / lengths.sum() * total_rings
    counts = np.maximum(np.floor(raw).astype(int), 3)
    while counts.sum() > total_rings:
        counts[np.argmax(counts)] -= 1
    order = np.argsort(-(raw - np.floor(raw)))
    i = 0
    while counts.sum() < total_rings:
        counts[order[i % len(counts)]] += 1
        i += 1

    vertices = []
    faces = []
    seg_rings = {}  # name -> list of (ring vertex indices, t, center_y)
    for (name, a, b, profile, ez, _), m in zip(_SEGMENTS, counts):
        pa, pb = _resolve(a), _resolve(b)
        axis = pb - pa
        u = axis / np.linalg.norm(axis)
        ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(u, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        rings = []
        for ri in range(m):
            t = ri / (m - 1)
            c = pa + axis * t
            r = _radius_at(profile, t)
            if name == "torso":
                zone = "hips_zone" if t < 0.3 else ("chest_zone" if t > 0.6 else "torso")
                r *= gmul[zone]
            else:
                r *= gmul["default"]
            rz = r * ez
            idx0 = len(vertices)
            for vi in range(k):
                phi = 2.0 * np.pi * vi / k
                vertices.append(c + r * np.cos(phi) * e1 + rz * np.sin(phi) * e2)
            rings.append((list(range(idx0, idx0 + k)), t, float(c[1])))
        for ri in range(m - 1):
            r0 = rings[ri][0]
            r1 = rings[ri + 1][0]
            for vi in range(k):
                vj = (vi + 1) % k
                faces.append((r0[vi], r1[vi], r0[vj]))
                faces.append((r1[vi], r1[vj], r0[vj]))
        seg_rings[name] = rings

    # remainder vertices: cap fan on top of the head
    head_top = _resolve(_SEGMENTS[1][2])
    last_head_ring = seg_rings["head"][-1][0]
    for t in range(rem):
        phi = 2.0 * np.pi * t / max(rem, 1)
        pos = head_top + np.array([0.015 * np.cos(phi), 0.02, 0.015 * np.sin(phi)])
        ci = len(vertices)
        vertices.append(pos)
        faces.append((ci, last_head_ring[t % k], last_head_ring[(t + 1) % k]))

    template = np.array(vertices)
    template += rng.normal(0.0, 0.0015, size=template.shape)  # per-seed surface detail
    faces = np.array(faces, dtype=np.int64)
    assert template.shape[0] == n_v

    joint_pos = np.array([_SKELETON[nm] for nm in JOINT_NAMES])
    skin_weights = _build_skin_weights(template, joint_pos)
    joint_regressor = _build_joint_regressor(template, joint_pos)
    shape_basis = _build_shape_basis(template)
    part_masks = _build_part_masks(template)
    rings = _pick_measurement_rings(seg_rings)
    angle_bounds = _default_angle_bounds()

    return BodyModel(
        template_vertices=template,
        faces=faces,
        shape_basis=shape_basis,
        joint_regressor=joint_regressor,
        skin_weights=skin_weights,
        kinematic_parents=KINEMATIC_PARENTS.copy(),
        part_masks=part_masks,
        measurement_rings=rings,
        gender_tag=gender,
        angle_bounds=angle_bounds,
    )


def _build_skin_weights(template, joint_pos, sigma=0.06, top_k=4):
    n_v = template.shape[0]
    n_j = joint_pos.shape[0]
    # bone of joint j runs from the joint to the mean of its children
    ends = joint_pos.copy()
    child_count = np.zeros(n_j)
    sums = np.zeros((n_j, 3))
    for j in range(1, n_j):
        p = KINEMATIC_PARENTS[j]
        sums[p] += joint_pos[j]
        child_count[p] += 1
    for j in range(n_j):
        ends[j] = sums[j] / child_count[j] if child_count[j] > 0 else joint_pos[j] + 1e-3

    d = np.empty((n_v, n_j))
    for j in range(n_j):
        d[:, j] = _point_segment_distance(template, joint_pos[j], ends[j])
    w = np.exp(-((d / sigma) ** 2))
    # keep the top-k influences per vertex
    keep = np.argsort(-w, axis=1)[:, :top_k]
    mask = np.zeros_like(w)
    np.put_along_axis(mask, keep, 1.0, axis=1)
    w = w * mask
    w += 1e-12  # guard fully-out-of-range vertices
    w /= w.sum(axis=1, keepdims=True)
    return w


def _point_segment_distance(points, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip((points - a) @ ab / max(denom, 1e-12), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _build_joint_regressor(template, joint_pos, sigma=0.05):
    n_j = joint_pos.shape[0]
    reg = np.empty((n_j, template.shape[0]))
    for j in range(n_j):
        d = np.linalg.norm(template - joint_pos[j], axis=1)
        w = np.exp(-((d / sigma) ** 2)) + 1e-12
        reg[j] = w / w.sum()
    return reg


def _build_shape_basis(template):
    v = template
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    ax = np.abs(x)

    def bump(val, mu, s):
        return np.exp(-(((val - mu) / s) ** 2))

    def soft(val, s=0.04):
        return 1.0 / (1.0 + np.exp(-val / s))

    head_center = np.array([0.0, 0.67, 0.0])
    dirs = np.zeros((v.shape[0], 3, N_BETA))
    dirs[:, :, 0] = 0.04 * v
    dirs[:, 1, 1] = 0.05 * y
    dirs[:, 0, 2] = 0.03 * x
    dirs[:, 2, 2] = 0.03 * z
    torso_w = bump(y, 0.2, 0.25)
    dirs[:, 0, 3] = 0.05 * torso_w * x
    dirs[:, 2, 3] = 0.05 * torso_w * z
    hip_w = bump(y, -0.08, 0.12)
    dirs[:, 0, 4] = 0.05 * hip_w * x
    dirs[:, 2, 4] = 0.05 * hip_w * z
    chest_w = bump(y, 0.33, 0.12)
    dirs[:, 0, 5] = 0.05 * chest_w * x
    dirs[:, 2, 5] = 0.05 * chest_w * z
    leg_w = soft(-y)
    dirs[:, 1, 6] = 0.05 * y * leg_w
    arm_w = soft(ax - 0.15)
    dirs[:, 0, 7] = 0.05 * x * arm_w
    head_w = bump(np.linalg.norm(v - head_center, axis=1), 0.0, 0.12)
    dirs[:, :, 8] = 0.06 * head_w[:, None] * (v - head_center)
    belly_w = bump(y, 0.05, 0.15) * bump(x, 0.0, 0.15) * soft(z, 0.02)
    dirs[:, 2, 9] = 0.04 * belly_w
    return dirs


_PART_ANCHORS = [
    ("head", (0.0, 0.67, 0.0), 0.17),
    ("spine", (0.0, 0.30, -0.10), 0.14),
    ("sacrum", (0.0, -0.02, -0.10), 0.08),
    ("ischium", (0.0, -0.14, -0.09), 0.08),
    ("left_shoulder", (0.18, 0.50, 0.0), 0.09),
    ("right_shoulder", (-0.18, 0.50, 0.0), 0.09),
    ("left_elbow", (0.25, 0.22, 0.0), 0.08),
    ("right_elbow", (-0.25, 0.22, 0.0), 0.08),
    ("left_hip", (0.16, -0.08, 0.0), 0.09),
    ("right_hip", (-0.16, -0.08, 0.0), 0.09),
    ("left_heel", (0.11, -0.93, -0.04), 0.07),
    ("right_heel", (-0.11, -0.93, -0.04), 0.07),
    ("left_toes", (0.11, -1.00, 0.14), 0.07),
    ("right_toes", (-0.11, -1.00, 0.14), 0.07),
]


def _build_part_masks(template):
    claimed = np.zeros(template.shape[0], dtype=bool)
    masks = {}
    for name, anchor, radius in _PART_ANCHORS:
        d = np.linalg.norm(template - np.array(anchor), axis=1)
        sel = np.where((d <= radius) & ~claimed)[0]
        if sel.size == 0:
            free = np.where(~claimed)[0]
            sel = free[np.argsort(d[free])[:1]]
        claimed[sel] = True
        masks[name] = np.sort(sel).astype(np.int64)
    return masks


def _pick_measurement_rings(seg_rings):
    targets = {"chest": 0.33, "waist": 0.05, "hips": -0.08}
    torso = seg_rings["torso"]
    out = {}
    for name, ty in targets.items():
        best = min(torso, key=lambda r: abs(r[2] - ty))
        out[name] = np.array(best[0], dtype=np.int64)
    return out


def _default_angle_bounds():
    b = np.tile(np.array([-0.35, 0.35]), (N_JOINTS - 1, 3, 1))
    by_joint = {
        # knees: mostly flexion about +X
        3: [(0.0, 1.0), (-0.1, 0.1), (-0.1, 0.1)],
        4: [(0.0, 1.0), (-0.1, 0.1), (-0.1, 0.1)],
        # spine chain kept gentle
        2: [(-0.2, 0.2)] * 3,
        5: [(-0.2, 0.2)] * 3,
        8: [(-0.2, 0.2)] * 3,
        # collars nearly rigid
        12: [(-0.08, 0.08)] * 3,
        13: [(-0.08, 0.08)] * 3,
        # elbows
        17: [(-0.2, 0.2), (-0.9, 0.2), (-0.2, 0.2)],
        18: [(-0.2, 0.2), (-0.2, 0.9), (-0.2, 0.2)],
    }
    for j, rows in by_joint.items():
        b[j] = np.array(rows)
    return b


# ---------------------------------------------------------------------------
# Model (de)serialization: JSON header + PMT1 tensors in a directory
# ---------------------------------------------------------------------------

_TENSOR_FIELDS = ("template_vertices", "shape_basis", "joint_regressor",
                  "skin_weights", "angle_bounds")


def save_model(model: BodyModel, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "pressmap-model-v1",
        "gender_tag": model.gender_tag,
        "kinematic_parents": model.kinematic_parents.tolist(),
        "faces": model.faces.tolist(),
        "part_masks": {k: v.tolist() for k, v in model.part_masks.items()},
        "measurement_rings": {k: v.tolist() for k, v in model.measurement_rings.items()},
        "axes": {"rest_vertical": "+Y", "mattress_normal": "+Z"},
    }
    (path / "header.json").write_text(
        json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    )
    for name in _TENSOR_FIELDS:
        pmt1.write_tensor(path / f"{name}.pmt1", getattr(model, name).astype("<f8"))


def load_model(path) -> BodyModel:
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    if header.get("format") != "pressmap-model-v1":
        raise ConfigInvalid(f"unrecognized model format in {path}")
    tensors = {name: pmt1.read_tensor(path / f"{name}.pmt1") for name in _TENSOR_FIELDS}
    return BodyModel(
        template_vertices=tensors["template_vertices"],
        faces=np.array(header["faces"], dtype=np.int64),
        shape_basis=tensors["shape_basis"],
        joint_regressor=tensors["joint_regressor"],
        skin_weights=tensors["skin_weights"],
        kinematic_parents=np.array(header["kinematic_parents"], dtype=np.int64),
        part_masks={k: np.array(v, dtype=np.int64) for k, v in header["part_masks"].items()},
        measurement_rings={k: np.array(v, dtype=np.int64)
                           for k, v in header["measurement_rings"].items()},
        gender_tag=header["gender_tag"],
        angle_bounds=tensors["angle_bounds"],
    )


def validate_model(model: BodyModel) -> list:
    """Return a list of invariant violations (empty when the model is valid)."""
    problems = []
    n_v = model.n_vertices
    if not np.all(model.skin_weights >= 0):
        problems.append("skin weights contain negative entries")
    if not np.allclose(model.skin_weights.sum(axis=1), 1.0, atol=1e-6):
        problems.append("skin weight rows do not sum to 1")
    if not np.allclose(model.joint_regressor.sum(axis=1), 1.0, atol=1e-6):
        problems.append("joint regressor rows do not sum to 1")
    parents = model.kinematic_parents
    if parents[0] != -1:
        problems.append("joint 0 is not the root")
    if not np.all(parents[1:] < np.arange(1, len(parents))):
        problems.append("kinematic parents are not topologically ordered")
    if model.faces.min() < 0 or model.faces.max() >= n_v:
        problems.append("face indices out of range")
    seen = np.zeros(n_v, dtype=bool)
    if set(model.part_masks) != set(PART_NAMES):
        problems.append("part mask names do not match the 14 expected parts")
    for name, mask in model.part_masks.items():
        if mask.size and (mask.min() < 0 or mask.max() >= n_v):
            problems.append(f"part mask '{name}' index out of range")
        if np.any(seen[mask]):
            problems.append(f"part mask '{name}' overlaps another mask")
        seen[mask] = True
    for name, ring in model.measurement_rings.items():
        if ring.min() < 0 or ring.max() >= n_v:
            problems.append(f"ring '{name}' index out of range")
    return problems
