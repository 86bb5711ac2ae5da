"""Loss stack: supervised terms on body parameters, mesh, pressure and
contact, plus the weakly-supervised reprojection pair.  Every loss accepts
Tensors (for training graphs) or plain arrays (auto-wrapped) and returns a
scalar Tensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, EmptyDataset, GeometryMismatch, NonFinite

_SIGMA_FLOOR = 1e-8
_PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class NormStats:
    sigma_beta: float
    sigma_theta: float
    sigma_yx: float
    sigma_s: float
    sigma_v: float
    sigma_p: float
    sigma_c: float

    def to_json(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(d):
        return NormStats(**{k: float(d[k]) for k in NormStats.__dataclass_fields__})

    @staticmethod
    def ones():
        return NormStats(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.25
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda_ws: float = 500.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda_ws) < 0:
            raise NonFinite("loss weights must be nonnegative")

    def to_json(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(d):
        return LossWeights(**{k: float(d[k]) for k in LossWeights.__dataclass_fields__
                              if k in d})


def _pooled_std(chunks):
    pooled = np.concatenate([np.asarray(c, dtype=np.float64).ravel() for c in chunks])
    return max(float(pooled.std()), _SIGMA_FLOOR)


def compute_stats(samples) -> NormStats:
    """Population standard deviation of each ground-truth quantity, pooled
    over all samples and components, floored at 1e-8."""
    samples = list(samples)
    if not samples:
        raise EmptyDataset("cannot compute stats of an empty dataset")
    return NormStats(
        sigma_beta=_pooled_std([s.gt_params.beta for s in samples]),
        sigma_theta=_pooled_std([s.gt_params.theta for s in samples]),
        sigma_yx=_pooled_std([s.gt_params.rot6() for s in samples]),
        sigma_s=_pooled_std([s.gt_mesh.joints for s in samples]),
        sigma_v=_pooled_std([s.gt_mesh.vertices for s in samples]),
        sigma_p=_pooled_std([s.gt_vpm.pressure for s in samples]),
        sigma_c=_pooled_std([s.gt_contact.contact for s in samples]),
    )


def _row_norms(diff):
    return ad.sqrt(ad.tsum(ad.square(diff), axis=1) + 1e-24)


def loss_smpl(pred_beta, pred_theta, pred_rot6, pred_joints,
              gt_beta, gt_theta, gt_rot6, gt_joints, stats: NormStats):
    """Absolute-error body-parameter loss plus per-joint Euclidean term."""
    pred_beta = ad.as_tensor(pred_beta)
    pred_theta = ad.as_tensor(pred_theta)
    pred_rot6 = ad.as_tensor(pred_rot6)
    pred_joints = ad.as_tensor(pred_joints)
    gt_beta = np.asarray(gt_beta, dtype=np.float64)
    gt_theta = np.asarray(gt_theta, dtype=np.float64)
    gt_rot6 = np.asarray(gt_rot6, dtype=np.float64)
    gt_joints = np.asarray(gt_joints, dtype=np.float64)
    for pred, gt in ((pred_beta, gt_beta), (pred_theta, gt_theta),
                     (pred_rot6, gt_rot6), (pred_joints, gt_joints)):
        if pred.shape != gt.shape:
            raise DimensionMismatch(f"prediction {pred.shape} vs gt {gt.shape}")
    if pred_rot6.shape != (6,):
        raise DimensionMismatch("rotation must carry 6 scalars")

    n_beta = gt_beta.shape[0]
    n_theta = gt_theta.shape[0]
    n_joints = gt_joints.shape[0]
    term_beta = ad.tsum(ad.absolute(pred_beta - gt_beta)) / (n_beta * stats.sigma_beta)
    term_theta = ad.tsum(ad.absolute(pred_theta - gt_theta)) / (n_theta * stats.sigma_theta)
    term_rot = ad.tsum(ad.absolute(pred_rot6 - gt_rot6)) / (6.0 * stats.sigma_yx)
    term_joints = ad.tsum(_row_norms(pred_joints - gt_joints)) / (n_joints * stats.sigma_s)
    return term_beta + term_theta + term_rot + term_joints


def loss_v2v(pred_v, gt_v, stats: NormStats):
    pred_v = ad.as_tensor(pred_v)
    gt_v = np.asarray(gt_v, dtype=np.float64)
    if pred_v.shape != gt_v.shape:
        raise DimensionMismatch("vertex arrays differ in shape")
    n_v = gt_v.shape[0]
    return ad.tsum(_row_norms(pred_v - gt_v)) / (n_v * stats.sigma_v)


def loss_p3d(pred_p, gt_p, stats: NormStats):
    pred_p = ad.as_tensor(pred_p)
    gt_p = np.asarray(gt_p, dtype=np.float64)
    if pred_p.shape != gt_p.shape:
        raise DimensionMismatch("pressure maps differ in shape")
    n_v = gt_p.shape[0]
    return ad.tsum(ad.absolute(pred_p - gt_p)) / (n_v * stats.sigma_p)


def loss_contact(pred_prob, gt_contact, stats: NormStats):
    pred_prob = ad.as_tensor(pred_prob)
    gt = np.asarray(gt_contact, dtype=np.float64)
    if pred_prob.shape != gt.shape:
        raise DimensionMismatch("contact arrays differ in shape")
    n_v = gt.shape[0]
    p = ad.clip(pred_prob, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    ce = -(gt * ad.log(p) + (1.0 - gt) * ad.log(1.0 - p))
    return ad.tsum(ce) / (n_v * stats.sigma_c)


def loss_total_supervised(l_smpl, l_v2v, l_p3d, l_contact, weights: LossWeights):
    total = ad.as_tensor(l_smpl) + weights.lambda1 * ad.as_tensor(l_v2v) \
        + weights.lambda2 * ad.as_tensor(l_p3d) + weights.lambda3 * ad.as_tensor(l_contact)
    if not np.isfinite(total.value):
        raise NonFinite("supervised loss is not finite")
    return total


def loss_p2d(projected, sensed):
    """Mean squared taxel error between the reprojection and the sensed image."""
    proj_vals = projected.values if hasattr(projected, "values") else projected
    proj_vals = ad.as_tensor(proj_vals)
    sensed_vals = sensed.values if hasattr(sensed, "values") else np.asarray(sensed)
    sensed_vals = np.asarray(sensed_vals, dtype=np.float64)
    if proj_vals.shape != sensed_vals.shape:
        raise GeometryMismatch("projected and sensed images differ in shape")
    return ad.tmean(ad.square(proj_vals - sensed_vals))


def loss_preg(pred_p, mesh):
    """Mean squared pressure over vertices above the mattress plane (z > 0)."""
    pred_p = ad.as_tensor(pred_p)
    above = np.where(np.asarray(mesh.vertices)[:, 2] > 0)[0]
    if above.size == 0:
        return ad.constant(0.0)
    return ad.tmean(ad.square(pred_p[above]))


def loss_total_ws(l_p2d, l_preg, weights: LossWeights):
    total = ad.as_tensor(l_p2d) + weights.lambda_ws * ad.as_tensor(l_preg)
    if not np.isfinite(total.value):
        raise NonFinite("weakly-supervised loss is not finite")
    return total
