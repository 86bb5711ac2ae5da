"""Evaluation metrics: 3D pose (MPJPE), mesh (PVE), anatomical shape
errors, and per-vertex pressure error (v2vP) with k-ring smoothed and
per-body-part variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import (
    NeighborTable,
    PART_NAMES,
    anatomical_measurements,
    rest_pose_mesh,
)
from .errors import DimensionMismatch, EmptyMask
from .projection import VertexPressureMap


@dataclass(frozen=True)
class MetricReport:
    mpjpe_mm: float
    pve_mm: float
    shape_err_cm: dict   # height/chest/waist/hips, cm
    v2vp: float          # kPa^2
    v2vp_1ea: float
    v2vp_2ea: float
    per_part_v2vp: dict  # 14 named kPa^2 values

    def to_json(self):
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "pve_mm": self.pve_mm,
            "shape_err_cm": dict(self.shape_err_cm),
            "v2vp_kpa2": self.v2vp,
            "v2vp_1ea_kpa2": self.v2vp_1ea,
            "v2vp_2ea_kpa2": self.v2vp_2ea,
            "per_part_v2vp_kpa2": dict(self.per_part_v2vp),
        }


def mpjpe(pred_joints, gt_joints) -> float:
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise DimensionMismatch("joint arrays must both be (N_j, 3)")
    return float(np.linalg.norm(pred - gt, axis=1).mean() * 1000.0)


def pve(pred_v, gt_v) -> float:
    pred = np.asarray(pred_v, dtype=np.float64)
    gt = np.asarray(gt_v, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise DimensionMismatch("vertex arrays must both be (N_v, 3)")
    return float(np.linalg.norm(pred - gt, axis=1).mean() * 1000.0)


def shape_errors(pred_beta, gt_beta, model) -> dict:
    """Absolute rest-pose anatomical differences, in cm."""
    pred_m = anatomical_measurements(rest_pose_mesh(model, pred_beta), model)
    gt_m = anatomical_measurements(rest_pose_mesh(model, gt_beta), model)
    keymap = {"height": "height_m", "chest": "chest_m",
              "waist": "waist_m", "hips": "hips_m"}
    return {k: abs(pred_m[mk] - gt_m[mk]) * 100.0 for k, mk in keymap.items()}


def v2vp(pred_p, gt_p) -> float:
    pred = np.asarray(pred_p, dtype=np.float64)
    gt = np.asarray(gt_p, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatch("pressure maps differ in shape")
    return float(np.mean((pred - gt) ** 2))


def smooth_kring(vpm, neighbors) -> VertexPressureMap:
    """Closed-neighborhood average: out[v] = mean over neighbors[v] + v itself."""
    p = vpm.pressure if isinstance(vpm, VertexPressureMap) else np.asarray(vpm)
    p = np.asarray(p, dtype=np.float64)
    if len(neighbors) != p.shape[0]:
        raise DimensionMismatch("neighbor table does not match map length")
    out = np.empty_like(p)
    for v, nb in enumerate(neighbors):
        out[v] = (p[nb].sum() + p[v]) / (len(nb) + 1)
    return VertexPressureMap(pressure=out)


def v2vp_smoothed(pred_p, gt_p, neighbors) -> float:
    sp = smooth_kring(pred_p if isinstance(pred_p, VertexPressureMap)
                      else VertexPressureMap(np.asarray(pred_p, dtype=np.float64)), neighbors)
    sg = smooth_kring(gt_p if isinstance(gt_p, VertexPressureMap)
                      else VertexPressureMap(np.asarray(gt_p, dtype=np.float64)), neighbors)
    return v2vp(sp.pressure, sg.pressure)


def per_part_v2vp(pred_p, gt_p, part_masks) -> dict:
    pred = np.asarray(pred_p, dtype=np.float64)
    gt = np.asarray(gt_p, dtype=np.float64)
    out = {}
    for name in PART_NAMES:
        mask = part_masks[name]
        if np.size(mask) == 0:
            raise EmptyMask(f"part mask '{name}' is empty")
        out[name] = float(np.mean((pred[mask] - gt[mask]) ** 2))
    return out


def evaluate_sample(pred_joints, pred_v, pred_beta, pred_pressure,
                    gt_joints, gt_v, gt_beta, gt_pressure,
                    model, table: NeighborTable) -> MetricReport:
    """Full per-sample metric report."""
    return MetricReport(
        mpjpe_mm=mpjpe(pred_joints, gt_joints),
        pve_mm=pve(pred_v, gt_v),
        shape_err_cm=shape_errors(pred_beta, gt_beta, model),
        v2vp=v2vp(pred_pressure, gt_pressure),
        v2vp_1ea=v2vp_smoothed(pred_pressure, gt_pressure, table.ring1),
        v2vp_2ea=v2vp_smoothed(pred_pressure, gt_pressure, table.ring2),
        per_part_v2vp=per_part_v2vp(pred_pressure, gt_pressure, model.part_masks),
    )


def mean_report(reports) -> MetricReport:
    """Arithmetic mean of per-sample reports."""
    reports = list(reports)
    if not reports:
        raise DimensionMismatch("cannot average zero reports")
    shape_keys = reports[0].shape_err_cm.keys()
    return MetricReport(
        mpjpe_mm=float(np.mean([r.mpjpe_mm for r in reports])),
        pve_mm=float(np.mean([r.pve_mm for r in reports])),
        shape_err_cm={k: float(np.mean([r.shape_err_cm[k] for r in reports]))
                      for k in shape_keys},
        v2vp=float(np.mean([r.v2vp for r in reports])),
        v2vp_1ea=float(np.mean([r.v2vp_1ea for r in reports])),
        v2vp_2ea=float(np.mean([r.v2vp_2ea for r in reports])),
        per_part_v2vp={k: float(np.mean([r.per_part_v2vp[k] for r in reports]))
                       for k in PART_NAMES},
    )
