"""Randomized finite-difference gradient suite.

Three tiers, all in double precision:

* every tape op against central differences (rel. err < 1e-6),
* every loss term against central differences (rel. err < 1e-6),
* the full supervised and weakly-supervised training graphs via random
  directional derivatives (rel. err < 1e-5).

Ops with genuine kinks (relu, absolute, clip, max-pool, the binning in the
2D reprojection) are checked at inputs sampled away from the kink; the
end-to-end checks use a two-step-size consistency filter so directions that
straddle a kink or flip a pixel bin are skipped rather than misreported.

``run_suite(corrupt_vjp=True)`` deliberately scales one VJP wrongly and is
expected to fail loudly; it exists to prove the harness can catch a broken
backward pass.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body_model import generate_toy_model, pose_mesh_graph, BodyParams
from .fdcheck import check_grad, rel_error
from .fim import gather
from .losses import (
    LossWeights,
    NormStats,
    compute_stats,
    loss_contact,
    loss_p2d,
    loss_p3d,
    loss_preg,
    loss_smpl,
    loss_total_supervised,
    loss_total_ws,
    loss_v2v,
)
from .network import (
    BodyMapNet,
    NetConfig,
    forward_bodymap_ws,
    frozen_mesh_outputs,
    supervised_sample_loss,
)
from .projection import reproject_2d_op
from .synth import DEFAULT_PRESSURE_GEOM, GenConfig, generate_samples

OP_TOL = 1e-6
COMPOSITE_TOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err < self.tol


@dataclass(frozen=True)
class GradCheckReport:
    results: tuple
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self):
        return {
            "passed": self.passed,
            "seconds": self.seconds,
            "checks": [
                {"name": r.name, "rel_err": r.rel_err, "tol": r.tol,
                 "passed": r.passed}
                for r in self.results
            ],
        }

    def format(self) -> str:
        lines = []
        for r in self.results:
            mark = "PASS" if r.passed else "FAIL"
            lines.append(f"[{mark}] {r.name:32s} rel_err={r.rel_err:.3e} tol={r.tol:g}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'}: "
                     f"{sum(r.passed for r in self.results)}/{len(self.results)} "
                     f"checks in {self.seconds:.1f}s")
        return "\n".join(lines)


def _away_from(x, threshold, margin):
    """Push values within ``margin`` of ``threshold`` out to the margin."""
    near = np.abs(x - threshold) < margin
    x = x.copy()
    x[near] = threshold + margin * np.sign(x[near] - threshold + 1e-30)
    return x


def _upstream(rng, shape):
    return rng.normal(size=shape)


def _op_cases(rng):
    """(name, build(*tensors) -> scalar Tensor, input arrays) triples."""
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(4, 5))
    col = rng.normal(size=(1, 5))
    pos = rng.uniform(0.5, 2.0, size=(4, 5))
    m1 = rng.normal(size=(4, 6))
    m2 = rng.normal(size=(6, 3))
    vec = rng.normal(size=6)
    batch = rng.normal(size=(3, 4, 6))
    img = rng.normal(size=(2, 7, 6))
    ker = rng.normal(size=(3, 2, 3, 3))
    kb = rng.normal(size=3)
    u_ab = _upstream(rng, (4, 5))
    u_m = _upstream(rng, (4, 3))
    u_mv = _upstream(rng, (4,))
    u_mb = _upstream(rng, (3, 4, 3))
    u_gs = _upstream(rng, (2, 3))
    u_gf = _upstream(rng, (4, 5))
    u_row = _upstream(rng, (5,))
    u_col = _upstream(rng, (4,))
    u_flat = _upstream(rng, (2, 10))
    u_t = _upstream(rng, (5, 4))
    u_cat = _upstream(rng, (4, 10))
    u_stk = _upstream(rng, (2, 4, 5))
    u_dense = _upstream(rng, (4, 3))
    u_conv = _upstream(rng, (3, 4, 3))
    bias = rng.normal(size=3)

    def s(t, u):
        return ad.tsum(t * ad.constant(u))

    cases = [
        ("add", lambda x, y: s(ad.add(x, y), u_ab), [a, b]),
        ("add_broadcast", lambda x, y: s(ad.add(x, y), u_ab), [a, col]),
        ("sub", lambda x, y: s(ad.sub(x, y), u_ab), [a, b]),
        ("mul", lambda x, y: s(ad.mul(x, y), u_ab), [a, b]),
        ("div", lambda x, y: s(ad.div(x, y), u_ab), [a, pos]),
        ("matmul", lambda x, y: s(ad.matmul(x, y), u_m), [m1, m2]),
        ("matmul_vec", lambda x, y: s(ad.matmul(x, y), u_mv), [m1, vec]),
        ("matmul_batched", lambda x, y: s(ad.matmul(x, y), u_mb), [batch, m2]),
        ("relu", lambda x: s(ad.relu(x), u_ab), [_away_from(a, 0.0, 0.05)]),
        ("sigmoid", lambda x: s(ad.sigmoid(x), u_ab), [a]),
        ("exp", lambda x: s(ad.exp(x), u_ab), [a]),
        ("log", lambda x: s(ad.log(x), u_ab), [pos]),
        ("sqrt", lambda x: s(ad.sqrt(x), u_ab), [pos]),
        ("sin", lambda x: s(ad.sin(x), u_ab), [a]),
        ("cos", lambda x: s(ad.cos(x), u_ab), [a]),
        ("absolute", lambda x: s(ad.absolute(x), u_ab), [_away_from(a, 0.0, 0.05)]),
        ("square", lambda x: s(ad.square(x), u_ab), [a]),
        ("power", lambda x: s(ad.power(x, 3.0), u_ab), [pos]),
        ("clip", lambda x: s(ad.clip(x, -0.8, 0.8), u_ab),
         [_away_from(_away_from(a, -0.8, 0.05), 0.8, 0.05)]),
        ("getitem_slice", lambda x: s(x[1:3, ::2], u_gs), [a]),
        ("getitem_fancy", lambda x: s(x[np.array([0, 2, 2, 3])], u_gf), [a]),
        ("tsum_all", lambda x: ad.tsum(x), [a]),
        ("tsum_axis", lambda x: s(ad.tsum(x, axis=0), u_row), [a]),
        ("tmean", lambda x: s(ad.tmean(x, axis=1), u_col), [a]),
        ("tmax", lambda x: s(ad.tmax(x, axis=0), u_row), [a]),
        ("reshape", lambda x: s(ad.reshape(x, (2, 10)), u_flat), [a]),
        ("transpose", lambda x: s(ad.transpose(x, (1, 0)), u_t), [a]),
        ("concat", lambda x, y: s(ad.concat([x, y], axis=1), u_cat), [a, b]),
        ("stack", lambda x, y: s(ad.stack([x, y], axis=0), u_stk), [a, b]),
        ("dense", lambda x, w, bb: s(ad.dense(x, w, bb), u_dense), [m1, m2, bias]),
        ("conv2d", lambda x, w, bb: s(ad.conv2d(x, w, bb, stride=2, pad=1), u_conv), [img, ker, kb]),
    ]
    return cases


def _structured_cases(rng, model):
    """Domain composites with their own VJPs: gather, reprojection, skinning."""
    n_v = model.n_vertices
    geom = DEFAULT_PRESSURE_GEOM
    params = BodyParams.identity()
    mesh_v = model.template_vertices + np.array([0.0, 0.0, 0.05])
    from .body_model import pose_mesh
    mesh = pose_mesh(model, params)
    fmap = rng.normal(size=(3, geom.rows, geom.cols))
    pix = np.stack([rng.randint(0, geom.rows, size=n_v),
                    rng.randint(0, geom.cols, size=n_v)], axis=1)
    u_g = _upstream(rng, (n_v, 3))
    u_r = _upstream(rng, (geom.rows, geom.cols))
    press = rng.uniform(0.0, 5.0, size=n_v)

    beta = rng.normal(0.0, 0.3, size=10)
    theta = rng.normal(0.0, 0.2, size=69)
    trans = rng.normal(0.0, 0.1, size=3)
    rot6 = np.array([1.0, 0.02, -0.01, 0.01, 1.0, 0.03]) + rng.normal(0, 0.05, 6)
    u_v = _upstream(rng, (n_v, 3))
    u_j = _upstream(rng, (24, 3))

    def lbs(b, t, tr, r6):
        v, j = pose_mesh_graph(model, b, t, tr, r6)
        return ad.tsum(v * ad.constant(u_v)) + ad.tsum(j * ad.constant(u_j))

    return [
        ("fim_gather", lambda f: ad.tsum(gather(f, pix) * ad.constant(u_g)), [fmap]),
        ("reproject_2d", lambda p: ad.tsum(reproject_2d_op(p, mesh, geom) * ad.constant(u_r)), [press]),
        ("pose_mesh_lbs", lbs, [beta, theta, trans, rot6]),
    ]


def _loss_cases(rng, model):
    n_v = model.n_vertices
    stats = NormStats.ones()
    gt_beta = rng.normal(size=10)
    gt_theta = rng.normal(0, 0.3, size=69)
    gt_rot6 = rng.normal(size=6)
    gt_joints = rng.normal(size=(24, 3))
    gt_v = rng.normal(size=(n_v, 3))
    gt_p = np.maximum(rng.normal(0.5, 1.0, size=n_v), 0.0)
    gt_c = (gt_p > 0).astype(np.float64)
    geom = DEFAULT_PRESSURE_GEOM
    from .body_model import pose_mesh
    mesh = pose_mesh(model, BodyParams.identity())
    sensed = np.maximum(rng.normal(0.2, 0.5, size=(geom.rows, geom.cols)), 0.0)

    p_beta = gt_beta + _away_from(rng.normal(0, 0.2, size=10), 0.0, 0.02)
    p_theta = gt_theta + _away_from(rng.normal(0, 0.2, size=69), 0.0, 0.02)
    p_rot6 = gt_rot6 + rng.normal(0, 0.2, size=6)
    p_joints = gt_joints + rng.normal(0, 0.1, size=(24, 3))
    p_v = gt_v + rng.normal(0, 0.1, size=(n_v, 3))
    p_p = gt_p + _away_from(rng.normal(0, 0.5, size=n_v), 0.0, 0.02)
    logits = rng.normal(0, 1.5, size=n_v)
    weights = LossWeights()

    def smpl(b, t, r, j):
        return loss_smpl(b, t, r, j, gt_beta, gt_theta, gt_rot6, gt_joints, stats)

    def total_sup(b, t, r, j, v, p, lg):
        return loss_total_supervised(
            smpl(b, t, r, j), loss_v2v(v, gt_v, stats),
            loss_p3d(p, gt_p, stats),
            loss_contact(ad.sigmoid(lg), gt_c, stats), weights)

    def total_ws(p):
        proj = reproject_2d_op(p, mesh, geom)
        return loss_total_ws(loss_p2d(proj, sensed), loss_preg(p, mesh), weights)

    return [
        ("loss_smpl", smpl, [p_beta, p_theta, p_rot6, p_joints]),
        ("loss_v2v", lambda v: loss_v2v(v, gt_v, stats), [p_v]),
        ("loss_p3d", lambda p: loss_p3d(p, gt_p, stats), [p_p]),
        ("loss_contact", lambda lg: loss_contact(ad.sigmoid(lg), gt_c, stats), [logits]),
        ("loss_p2d", lambda p: loss_p2d(reproject_2d_op(p, mesh, geom), sensed), [p_p]),
        ("loss_preg", lambda p: loss_preg(p, mesh), [p_p]),
        ("loss_total_supervised", total_sup,
         [p_beta, p_theta, p_rot6, p_joints, p_v, p_p, logits]),
        ("loss_total_ws", total_ws, [p_p]),
    ]


def _directional_check(params, loss_fn, rng, n_dirs=3, eps=4e-6):
    """Worst directional-derivative error over random directions per tensor.

    Directions whose two-step central differences disagree beyond the
    composite tolerance straddle a kink or a bin flip and are skipped.
    """
    loss = loss_fn()
    loss.backward()
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
             for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.value.reshape(-1)
        base = flat.copy()
        for _ in range(n_dirs):
            d = rng.normal(size=flat.size)
            d /= np.linalg.norm(d)
            analytic = float(g.reshape(-1) @ d)

            def fd(step):
                flat[:] = base + step * d
                lp = float(loss_fn().value)
                flat[:] = base - step * d
                lm = float(loss_fn().value)
                flat[:] = base
                return (lp - lm) / (2.0 * step)

            def richardson_at(step):
                f1, f2, f4 = fd(step), fd(step / 2.0), fd(step / 4.0)
                if abs(f1 - f2) / max(abs(f1), abs(f2), 1e-6) > COMPOSITE_TOL:
                    return None  # nonsmooth direction; FD is untrustworthy here
                r12 = (4.0 * f2 - f1) / 3.0
                r24 = (4.0 * f4 - f2) / 3.0
                if abs(r12 - r24) / max(abs(r12), abs(r24), 1e-6) > COMPOSITE_TOL / 2:
                    return None  # extrapolations disagree: a kink below step
                return r24

            # two well-separated step scales must agree: a kink hiding below
            # one scale's smallest window still shows up as a scale-dependent
            # jump term, while a genuine gradient bug is scale-independent
            ra, rb = richardson_at(eps), richardson_at(eps / 4.0)
            if ra is None or rb is None:
                continue
            if abs(ra - rb) / max(abs(ra), abs(rb), 1e-6) > COMPOSITE_TOL / 2:
                continue
            richardson = rb
            rel = abs(richardson - analytic) / max(abs(richardson),
                                                   abs(analytic), 1e-8)
            worst = max(worst, rel)
    return worst


def _composite_cases(seed):
    model = generate_toy_model(seed=seed)
    samples = generate_samples(model, GenConfig(n_samples=2, seed=seed + 3))
    stats = compute_stats(samples)
    weights = LossWeights()
    sample = samples[0]
    geom = DEFAULT_PRESSURE_GEOM

    net = BodyMapNet(NetConfig(seed=seed + 1), model, geom)

    def supervised():
        net.zero_grad()
        return supervised_sample_loss(net, sample, stats, weights)[0]

    ws_net = BodyMapNet(NetConfig(seed=seed + 2), model, geom, ws_head=True)
    frozen = frozen_mesh_outputs(net, sample.depth, sample.pressure)
    sensed = sample.pressure.values

    def ws():
        ws_net.zero_grad()
        pred = forward_bodymap_ws(ws_net, frozen)
        proj = reproject_2d_op(pred, frozen["mesh"], geom)
        return loss_total_ws(loss_p2d(proj, sensed),
                             loss_preg(pred, frozen["mesh"]), weights)

    return [("end_to_end_supervised", net.parameters(), supervised),
            ("end_to_end_ws", ws_net.parameters(), ws)]


@contextlib.contextmanager
def _corrupted_relu():
    """Scale relu's VJP wrongly; the suite must then fail."""
    original = ad.relu

    def broken(a):
        a = ad.as_tensor(a)
        out = ad.Tensor(np.maximum(a.value, 0.0), requires_grad=a.requires_grad)
        if a.requires_grad:
            mask = (a.value > 0).astype(np.float64)
            out._parents = ((a, lambda g: 1.5 * g * mask),)
        return out

    ad.relu = broken
    try:
        yield
    finally:
        ad.relu = original


def run_suite(seed: int = 0, corrupt_vjp: bool = False) -> GradCheckReport:
    """Run every op, loss, and composite check; returns the full report."""
    t0 = time.time()
    rng = np.random.RandomState(seed)
    model = generate_toy_model(seed=seed)
    results = []

    with _corrupted_relu() if corrupt_vjp else contextlib.nullcontext():
        for name, build, arrays in _op_cases(rng):
            results.append(CheckResult(name, check_grad(build, arrays), OP_TOL))
        for name, build, arrays in _structured_cases(rng, model):
            results.append(CheckResult(name, check_grad(build, arrays), OP_TOL))
        for name, build, arrays in _loss_cases(rng, model):
            results.append(CheckResult(name, check_grad(build, arrays), OP_TOL))
        for name, params, loss_fn in _composite_cases(seed):
            err = _directional_check(params, loss_fn, rng)
            results.append(CheckResult(name, err, COMPOSITE_TOL))

    return GradCheckReport(results=tuple(results), seconds=time.time() - t0)
