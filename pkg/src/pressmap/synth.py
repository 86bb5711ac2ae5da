"""Deterministic synthetic in-bed scenes: sampled body poses, top-down
orthographic depth rendering (optionally occluded by a blanket surface),
contact-force pressure images, and dataset packaging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import pmt1
from .body_model import BodyModel, BodyParams, PosedMesh, load_model, pose_mesh, save_model
from .errors import ConfigInvalid, NoContact
from .projection import (
    DepthImage,
    ImageGeometry,
    PressureImage,
    VertexContact,
    VertexPressureMap,
    contact_from_pressure,
    project_gt,
)

GRAVITY = 9.81
CAMERA_HEIGHT = 2.0

POSE_CATEGORIES = ("supine", "left_lateral", "right_lateral")
COVER_MODES = ("uncovered", "cover1", "cover2")
COVER_THICKNESS = {"uncovered": 0.0, "cover1": 0.02, "cover2": 0.05}

# commercial-mat-like proportions: 64 x 27 taxels, depth at twice the density
DEFAULT_PRESSURE_GEOM = ImageGeometry(
    rows=64, cols=27, pitch=0.0286, origin_xy=(-27 * 0.0286 / 2.0, -64 * 0.0286 / 2.0)
)
DEFAULT_DEPTH_GEOM = ImageGeometry(
    rows=128, cols=54, pitch=0.0143, origin_xy=(-27 * 0.0286 / 2.0, -64 * 0.0286 / 2.0)
)


@dataclass(frozen=True)
class SceneSample:
    depth: DepthImage
    pressure: PressureImage
    gender: str
    gt_params: BodyParams
    gt_mesh: PosedMesh
    gt_vpm: VertexPressureMap
    gt_contact: VertexContact
    pose_category: str
    cover: str


@dataclass(frozen=True)
class GenConfig:
    n_samples: int = 64
    seed: int = 0
    shape_range: float = 1.0
    pose_scale: float = 0.5
    mass_range: tuple = (50.0, 90.0)
    z_eps: float = 0.08  # generous contact band: stands in for mattress sinkage
    diffusion_sigma: float = 1.5  # taxels of mattress pressure spreading
    categories: tuple = POSE_CATEGORIES
    covers: tuple = COVER_MODES
    genders: tuple = ("female", "male")
    pressure_geom: ImageGeometry = DEFAULT_PRESSURE_GEOM
    depth_geom: ImageGeometry = DEFAULT_DEPTH_GEOM

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ConfigInvalid("n_samples must be positive")
        for c in self.categories:
            if c not in POSE_CATEGORIES:
                raise ConfigInvalid(f"unknown pose category '{c}'")
        for c in self.covers:
            if c not in COVER_MODES:
                raise ConfigInvalid(f"unknown cover mode '{c}'")

    def to_json(self):
        return {
            "n_samples": self.n_samples, "seed": self.seed,
            "shape_range": self.shape_range, "pose_scale": self.pose_scale,
            "mass_range": list(self.mass_range), "z_eps": self.z_eps,
            "diffusion_sigma": self.diffusion_sigma,
            "categories": list(self.categories), "covers": list(self.covers),
            "genders": list(self.genders),
            "pressure_geom": self.pressure_geom.to_json(),
            "depth_geom": self.depth_geom.to_json(),
        }

    @staticmethod
    def from_json(d):
        kw = {}
        for k in ("n_samples", "seed"):
            if k in d:
                kw[k] = int(d[k])
        for k in ("shape_range", "pose_scale", "z_eps", "diffusion_sigma"):
            if k in d:
                kw[k] = float(d[k])
        if "mass_range" in d:
            kw["mass_range"] = tuple(float(x) for x in d["mass_range"])
        for k in ("categories", "covers", "genders"):
            if k in d:
                kw[k] = tuple(d[k])
        for k in ("pressure_geom", "depth_geom"):
            if k in d:
                kw[k] = ImageGeometry.from_json(d[k])
        return GenConfig(**kw)


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sample_params(rng, category, model: BodyModel, shape_range=1.0,
                  pose_scale=1.0, gender="neutral") -> BodyParams:
    """Category-constrained body parameters, grounded so the lowest vertex
    touches z = 0."""
    if category not in POSE_CATEGORIES:
        raise ConfigInvalid(f"unknown pose category '{category}'")
    beta = rng.uniform(-shape_range, shape_range, size=model.n_beta)
    lo = model.angle_bounds[:, :, 0].ravel()
    hi = model.angle_bounds[:, :, 1].ravel()
    theta = rng.uniform(lo, hi) * pose_scale

    if category == "supine":
        roll = np.deg2rad(rng.uniform(-12.0, 12.0))
    elif category == "left_lateral":
        roll = np.deg2rad(90.0 + rng.uniform(-12.0, 12.0))
    else:
        roll = np.deg2rad(-90.0 + rng.uniform(-12.0, 12.0))
    yaw = np.deg2rad(rng.uniform(-6.0, 6.0))
    rot = _rot_z(yaw) @ _rot_y(roll)

    trans = np.array([rng.uniform(-0.05, 0.05), 0.11 + rng.uniform(-0.04, 0.04), 0.0])
    params = BodyParams(
        beta=beta, theta=theta, root_trans=trans,
        root_rot_x=rot[:, 0].copy(), root_rot_y=rot[:, 1].copy(), gender=gender,
    )
    # ground: translation enters additively, so one correction pass is exact
    mesh = pose_mesh(model, params)
    drop = mesh.vertices[:, 2].min()
    return replace(params, root_trans=trans - np.array([0.0, 0.0, drop]))


# ---------------------------------------------------------------------------
# Depth rendering
# ---------------------------------------------------------------------------


def _height_field(mesh: PosedMesh, geom: ImageGeometry):
    """Per-pixel max surface height via orthographic z-buffer rasterization."""
    h = np.full((geom.rows, geom.cols), -np.inf)
    verts = mesh.vertices
    ox, oy = geom.origin_xy
    pitch = geom.pitch
    for tri in mesh.source_faces:
        p = verts[tri]
        xs, ys, zs = p[:, 0], p[:, 1], p[:, 2]
        c0 = int(np.floor((xs.min() - ox) / pitch))
        c1 = int(np.floor((xs.max() - ox) / pitch))
        r0 = int(np.floor((ys.min() - oy) / pitch))
        r1 = int(np.floor((ys.max() - oy) / pitch))
        c0, c1 = max(c0, 0), min(c1, geom.cols - 1)
        r0, r1 = max(r0, 0), min(r1, geom.rows - 1)
        if c0 > c1 or r0 > r1:
            continue
        cc, rr = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        px = ox + (cc + 0.5) * pitch
        py = oy + (rr + 0.5) * pitch
        d = (ys[1] - ys[2]) * (xs[0] - xs[2]) + (xs[2] - xs[1]) * (ys[0] - ys[2])
        if abs(d) < 1e-14:
            continue
        w0 = ((ys[1] - ys[2]) * (px - xs[2]) + (xs[2] - xs[1]) * (py - ys[2])) / d
        w1 = ((ys[2] - ys[0]) * (px - xs[2]) + (xs[0] - xs[2]) * (py - ys[2])) / d
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        if not inside.any():
            continue
        z = w0 * zs[0] + w1 * zs[1] + w2 * zs[2]
        block = h[r0 : r1 + 1, c0 : c1 + 1]
        np.maximum(block, np.where(inside, z, -np.inf), out=block)
    return h


def render_depth(mesh: PosedMesh, geom: ImageGeometry, cover="uncovered",
                 camera_height=CAMERA_HEIGHT) -> DepthImage:
    """Top-down orthographic depth: camera plane at ``camera_height`` above the
    mattress, value = height - surface z, background = height."""
    if cover not in COVER_MODES:
        raise ConfigInvalid(f"unknown cover mode '{cover}'")
    h = _height_field(mesh, geom)
    body = np.where(np.isfinite(h), h, 0.0)
    surface = body
    thickness = COVER_THICKNESS[cover]
    if thickness > 0.0:
        support = (np.isfinite(h)).astype(np.float64)
        sigma = 2.0
        draped = ndimage.gaussian_filter(body, sigma=sigma) + thickness
        silhouette = ndimage.gaussian_filter(support, sigma=sigma) > 0.05
        cover_h = np.where(silhouette, np.maximum(body, draped), 0.0)
        surface = np.maximum(body, cover_h)
    depth = camera_height - surface
    return DepthImage(values=depth, geom=geom)


# ---------------------------------------------------------------------------
# Pressure simulation
# ---------------------------------------------------------------------------


def vertex_areas(mesh: PosedMesh):
    """One third of the incident triangle areas, per vertex."""
    v = mesh.vertices
    tris = mesh.source_faces
    a = v[tris[:, 1]] - v[tris[:, 0]]
    b = v[tris[:, 2]] - v[tris[:, 0]]
    face_area = 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
    out = np.zeros(v.shape[0])
    for k in range(3):
        np.add.at(out, tris[:, k], face_area / 3.0)
    return out


def simulate_pressure(mesh: PosedMesh, geom: ImageGeometry, body_mass_kg,
                      z_eps=0.01, diffusion_sigma=0.0) -> PressureImage:
    """Static area-weighted force sharing: contact vertices split m*g in
    proportion to their surface area; per-taxel force becomes kPa.

    ``diffusion_sigma`` (in taxels) models the mattress spreading point loads
    into smooth blobs; the blurred grid is rescaled so total force stays
    exactly m*g."""
    if body_mass_kg <= 0:
        raise ConfigInvalid("body mass must be positive")
    v = mesh.vertices
    contact = v[:, 2] <= z_eps
    if not contact.any():
        raise NoContact("no vertex touches the mattress plane")
    areas = vertex_areas(mesh)
    shares = np.zeros(v.shape[0])
    shares[contact] = body_mass_kg * GRAVITY * areas[contact] / areas[contact].sum()

    cols = np.floor((v[:, 0] - geom.origin_xy[0]) / geom.pitch).astype(np.int64)
    rows = np.floor((v[:, 1] - geom.origin_xy[1]) / geom.pitch).astype(np.int64)
    inside = contact & (rows >= 0) & (rows < geom.rows) & (cols >= 0) & (cols < geom.cols)
    force = np.zeros((geom.rows, geom.cols))
    np.add.at(force, (rows[inside], cols[inside]), shares[inside])
    if diffusion_sigma > 0.0 and force.sum() > 0.0:
        total = force.sum()
        force = ndimage.gaussian_filter(force, sigma=diffusion_sigma,
                                        mode="constant")
        force *= total / force.sum()
    pressure_kpa = force / (geom.pitch * geom.pitch) / 1000.0
    return PressureImage(values=pressure_kpa, geom=geom)


# ---------------------------------------------------------------------------
# Scene + dataset assembly
# ---------------------------------------------------------------------------


def generate_scene(model: BodyModel, rng, category, cover, config: GenConfig,
                   gender=None) -> SceneSample:
    gender = gender if gender is not None else model.gender_tag
    params = sample_params(rng, category, model, shape_range=config.shape_range,
                           pose_scale=config.pose_scale, gender=gender)
    mesh = pose_mesh(model, params)
    mass = rng.uniform(*config.mass_range)
    pressure = simulate_pressure(mesh, config.pressure_geom, mass,
                                 z_eps=config.z_eps,
                                 diffusion_sigma=config.diffusion_sigma)
    depth = render_depth(mesh, config.depth_geom, cover=cover)
    gt_vpm = project_gt(pressure, mesh, z_eps=config.z_eps)
    gt_contact = contact_from_pressure(gt_vpm)
    return SceneSample(
        depth=depth, pressure=pressure, gender=gender, gt_params=params,
        gt_mesh=mesh, gt_vpm=gt_vpm, gt_contact=gt_contact,
        pose_category=category, cover=cover,
    )


def generate_samples(model: BodyModel, config: GenConfig):
    """Round-robin over (category, cover) cells, fully seeded."""
    rng = np.random.RandomState(config.seed)
    samples = []
    for i in range(config.n_samples):
        category = config.categories[i % len(config.categories)]
        cover = config.covers[(i // len(config.categories)) % len(config.covers)]
        gender = config.genders[i % len(config.genders)]
        samples.append(generate_scene(model, rng, category, cover, config, gender=gender))
    return samples


def save_dataset(path, model: BodyModel, samples, config: GenConfig):
    path = Path(path)
    (path / "samples").mkdir(parents=True, exist_ok=True)
    save_model(model, path / "model")
    entries = []
    for i, s in enumerate(samples):
        d = path / "samples" / f"{i:05d}"
        d.mkdir(exist_ok=True)
        pmt1.write_tensor(d / "depth.pmt1", s.depth.values)
        pmt1.write_tensor(d / "pressure.pmt1", s.pressure.values)
        pmt1.write_tensor(d / "beta.pmt1", s.gt_params.beta)
        pmt1.write_tensor(d / "theta.pmt1", s.gt_params.theta)
        root = np.concatenate([s.gt_params.root_trans, s.gt_params.rot6()])
        pmt1.write_tensor(d / "root.pmt1", root)
        pmt1.write_tensor(d / "gt_vertices.pmt1", s.gt_mesh.vertices)
        pmt1.write_tensor(d / "gt_joints.pmt1", s.gt_mesh.joints)
        pmt1.write_tensor(d / "gt_vpm.pmt1", s.gt_vpm.pressure)
        pmt1.write_tensor(d / "gt_contact.pmt1", s.gt_contact.contact.astype(np.uint8))
        entries.append({"id": i, "dir": f"samples/{i:05d}", "pose_category": s.pose_category,
                        "cover": s.cover, "gender": s.gender})
    manifest = {
        "format": "pressmap-dataset-v1",
        "model_dir": "model",
        "z_eps": config.z_eps,
        "pressure_geom": config.pressure_geom.to_json(),
        "depth_geom": config.depth_geom.to_json(),
        "seed": config.seed,
        "samples": entries,
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_dataset(path):
    """Returns (model, samples, manifest dict)."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "pressmap-dataset-v1":
        raise ConfigInvalid(f"unrecognized dataset format at {path}")
    model = load_model(path / manifest["model_dir"])
    pgeom = ImageGeometry.from_json(manifest["pressure_geom"])
    dgeom = ImageGeometry.from_json(manifest["depth_geom"])
    samples = []
    for e in manifest["samples"]:
        d = path / e["dir"]
        root = pmt1.read_tensor(d / "root.pmt1")
        params = BodyParams(
            beta=pmt1.read_tensor(d / "beta.pmt1"),
            theta=pmt1.read_tensor(d / "theta.pmt1"),
            root_trans=root[:3], root_rot_x=root[3:6], root_rot_y=root[6:9],
            gender=e["gender"],
        )
        mesh = PosedMesh(
            vertices=pmt1.read_tensor(d / "gt_vertices.pmt1"),
            joints=pmt1.read_tensor(d / "gt_joints.pmt1"),
            source_faces=model.faces,
        )
        samples.append(SceneSample(
            depth=DepthImage(values=pmt1.read_tensor(d / "depth.pmt1"), geom=dgeom),
            pressure=PressureImage(values=pmt1.read_tensor(d / "pressure.pmt1"), geom=pgeom),
            gender=e["gender"],
            gt_params=params,
            gt_mesh=mesh,
            gt_vpm=VertexPressureMap(pressure=pmt1.read_tensor(d / "gt_vpm.pmt1")),
            gt_contact=VertexContact(contact=pmt1.read_tensor(d / "gt_contact.pmt1")
                                     .astype(np.float64)),
            pose_category=e["pose_category"],
            cover=e["cover"],
        ))
    return model, samples, manifest
