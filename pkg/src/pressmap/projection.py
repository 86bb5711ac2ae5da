"""2D pressure image <-> per-vertex 3D pressure map conversion.

Ground truth flows image -> vertices via vertical projection; the
weakly-supervised path flows vertices -> image via a differentiable
per-taxel average.  Both directions share one half-open binning rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import GeometryMismatch, NegativePressure


@dataclass(frozen=True)
class ImageGeometry:
    rows: int
    cols: int
    pitch: float          # meters per taxel/pixel
    origin_xy: tuple      # world (x, y) of the (0, 0) taxel corner

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.pitch <= 0:
            raise GeometryMismatch("geometry dims and pitch must be positive")

    def to_json(self):
        return {"rows": self.rows, "cols": self.cols, "pitch_m": self.pitch,
                "origin_xy_m": list(self.origin_xy)}

    @staticmethod
    def from_json(d):
        return ImageGeometry(rows=int(d["rows"]), cols=int(d["cols"]),
                             pitch=float(d["pitch_m"]),
                             origin_xy=tuple(d["origin_xy_m"]))


@dataclass(frozen=True)
class PressureImage:
    values: np.ndarray  # (R, C) kPa
    geom: ImageGeometry

    def __post_init__(self):
        if self.values.shape != (self.geom.rows, self.geom.cols):
            raise GeometryMismatch("pressure values do not match geometry dims")


@dataclass(frozen=True)
class DepthImage:
    values: np.ndarray  # (H, W) meters from the overhead camera plane; <0 = no return
    geom: ImageGeometry

    def __post_init__(self):
        if self.values.shape != (self.geom.rows, self.geom.cols):
            raise GeometryMismatch("depth values do not match geometry dims")


@dataclass(frozen=True)
class VertexPressureMap:
    pressure: np.ndarray  # (N_v,) kPa


@dataclass(frozen=True)
class VertexContact:
    contact: np.ndarray  # (N_v,) in {0, 1}


def bin_xy(xy, geom: ImageGeometry):
    """Half-open binning of world (x, y) points into (row, col) indices.

    Returns integer arrays (rows, cols) without bounds filtering.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    cols = np.floor((xy[:, 0] - geom.origin_xy[0]) / geom.pitch).astype(np.int64)
    rows = np.floor((xy[:, 1] - geom.origin_xy[1]) / geom.pitch).astype(np.int64)
    return rows, cols


def taxel_of_point(xy, img: PressureImage):
    """(row, col) of the taxel containing ``xy``, or None when off-grid."""
    rows, cols = bin_xy(np.asarray(xy)[None, :] if np.ndim(xy) == 1 else xy, img.geom)
    r, c = int(rows[0]), int(cols[0])
    if 0 <= r < img.geom.rows and 0 <= c < img.geom.cols:
        return (r, c)
    return None


def _vertex_bins(vertices, geom: ImageGeometry):
    rows, cols = bin_xy(vertices[:, :2], geom)
    inside = (rows >= 0) & (rows < geom.rows) & (cols >= 0) & (cols < geom.cols)
    return rows, cols, inside


def project_gt(img: PressureImage, mesh, z_eps=0.01) -> VertexPressureMap:
    """Vertical projection of the sensed image onto mesh vertices.

    A vertex inherits its taxel's kPa value unchanged when it bins in-grid
    and sits at or below ``z_eps``; all other vertices get 0.
    """
    v = mesh.vertices
    rows, cols, inside = _vertex_bins(v, img.geom)
    take = inside & (v[:, 2] <= z_eps)
    out = np.zeros(v.shape[0])
    out[take] = img.values[rows[take], cols[take]]
    return VertexPressureMap(pressure=out)


def contact_from_pressure(vpm: VertexPressureMap) -> VertexContact:
    if np.any(vpm.pressure < 0):
        raise NegativePressure("ground-truth pressure map has negative entries")
    return VertexContact(contact=(vpm.pressure > 0).astype(np.float64))


def reproject_bins(mesh, geom: ImageGeometry):
    """Precomputed binning for the vertex -> taxel mean: (flat taxel index per
    vertex or -1, per-taxel vertex counts)."""
    rows, cols, inside = _vertex_bins(mesh.vertices, geom)
    flat = np.where(inside, rows * geom.cols + cols, -1)
    counts = np.zeros(geom.rows * geom.cols)
    np.add.at(counts, flat[inside], 1.0)
    return flat, counts


def reproject_2d(vpm, mesh, geom: ImageGeometry) -> PressureImage:
    """Per-taxel mean of the vertex pressures binned to it (0 when empty)."""
    pressure = vpm.pressure if isinstance(vpm, VertexPressureMap) else np.asarray(vpm)
    flat, counts = reproject_bins(mesh, geom)
    inside = flat >= 0
    acc = np.zeros(geom.rows * geom.cols)
    np.add.at(acc, flat[inside], pressure[inside])
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, acc / np.maximum(counts, 1.0), 0.0)
    return PressureImage(values=mean.reshape(geom.rows, geom.cols), geom=geom)


def reproject_2d_vjp(upstream, mesh, geom: ImageGeometry):
    """Exact adjoint of :func:`reproject_2d` w.r.t. the vertex pressures."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (geom.rows, geom.cols):
        raise GeometryMismatch("upstream shape does not match geometry")
    flat, counts = reproject_bins(mesh, geom)
    grad = np.zeros(mesh.vertices.shape[0])
    inside = flat >= 0
    up_flat = upstream.reshape(-1)
    grad[inside] = up_flat[flat[inside]] / np.maximum(counts[flat[inside]], 1.0)
    return grad


def reproject_2d_op(pressure_t, mesh, geom: ImageGeometry):
    """Tape op wrapping the linear vertex -> image map (mesh held constant)."""
    pressure_t = ad.as_tensor(pressure_t)
    flat, counts = reproject_bins(mesh, geom)
    inside = flat >= 0
    up_count = np.maximum(counts, 1.0)

    acc = np.zeros(geom.rows * geom.cols)
    np.add.at(acc, flat[inside], pressure_t.value[inside])
    value = np.where(counts > 0, acc / up_count, 0.0).reshape(geom.rows, geom.cols)

    def vjp(g):
        grad = np.zeros(pressure_t.value.shape[0])
        gf = g.reshape(-1)
        grad[inside] = gf[flat[inside]] / up_count[flat[inside]]
        return grad

    return ad.Tensor(value, [(pressure_t, vjp)])
