"""Body-mesh + pressure-map networks and training loops.

A small strided conv encoder reads the stacked pressure + depth input,
a dense head regresses body parameters that drive the differentiable
skinning, and a shared per-vertex MLP with global max-pool fusion predicts
per-vertex pressure and contact.  The weakly-supervised variant reuses a
frozen mesh network and trains a pressure-only head through the 2D
reprojection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from . import pmt1
from .body_model import BodyModel, N_BETA, N_THETA, PosedMesh, pose_mesh_graph
from .errors import ConfigInvalid, EmptyDataset, GeometryMismatch, ShapeMismatch
from .fim import FimToggles, fuse, gather, register
from .losses import (
    LossWeights,
    NormStats,
    loss_contact,
    loss_p2d,
    loss_p3d,
    loss_preg,
    loss_smpl,
    loss_total_supervised,
    loss_total_ws,
    loss_v2v,
)
from .projection import ImageGeometry, reproject_2d_op
from .synth import CAMERA_HEIGHT


# height feature scale/gain for the weakly-supervised gate: one unit of the
# wsz_w parameter swings the gate logit by GAIN across SCALE meters of height
WS_Z_SCALE = 0.02
WS_Z_GAIN = 50.0


@dataclass(frozen=True)
class NetConfig:
    enc_channels: tuple = (8, 16, 32, 32)
    kernel: int = 3
    hidden: int = 64
    fim: FimToggles = FimToggles()
    pressure_norm: float = 50.0   # kPa scale for the input image channel
    press_scale: float = 50.0     # kPa scale applied to the raw pressure output
    mesh_gain: float = 10.0       # output gain of the body-parameter head
    contact_gain: float = 10.0    # output gain of the contact logit
    skip_gain: float = 20.0       # gain of the linear feature->output bypass
    ws_gate_bias: float = 3.0     # opens the WS gate at init (naive projection)
    ws_gather_sigma: float = 2.0  # taxels; smooths the gathered pressure so the
                                  # gate tolerates frozen-mesh registration error
    seed: int = 0

    def to_json(self):
        return {"enc_channels": list(self.enc_channels), "kernel": self.kernel,
                "hidden": self.hidden, "fim": self.fim.to_json(),
                "pressure_norm": self.pressure_norm,
                "press_scale": self.press_scale, "mesh_gain": self.mesh_gain,
                "contact_gain": self.contact_gain, "skip_gain": self.skip_gain,
                "ws_gate_bias": self.ws_gate_bias,
                "ws_gather_sigma": self.ws_gather_sigma, "seed": self.seed}

    @staticmethod
    def from_json(d):
        return NetConfig(
            enc_channels=tuple(d["enc_channels"]), kernel=int(d["kernel"]),
            hidden=int(d["hidden"]), fim=FimToggles.from_json(d["fim"]),
            pressure_norm=float(d["pressure_norm"]),
            press_scale=float(d["press_scale"]),
            mesh_gain=float(d.get("mesh_gain", 10.0)),
            contact_gain=float(d.get("contact_gain", 10.0)),
            skip_gain=float(d.get("skip_gain", 20.0)),
            ws_gate_bias=float(d.get("ws_gate_bias", 3.0)),
            ws_gather_sigma=float(d.get("ws_gather_sigma", 2.0)),
            seed=int(d["seed"]),
        )


def _init_dense(rng, n_in, n_out, scale=None):
    scale = np.sqrt(2.0 / n_in) if scale is None else scale
    w = ad.parameter(rng.normal(0.0, scale, size=(n_in, n_out)))
    # small random biases keep relu pre-activations off the exact kink even
    # where the input is identically zero
    b = ad.parameter(rng.normal(0.0, 0.01, size=n_out))
    return w, b


def _init_conv(rng, c_in, c_out, k):
    scale = np.sqrt(2.0 / (c_in * k * k))
    w = ad.parameter(rng.normal(0.0, scale, size=(c_out, c_in, k, k)))
    b = ad.parameter(rng.normal(0.0, 0.01, size=c_out))
    return w, b


class BodyMapNet:
    """Mesh regressor + per-vertex pressure/contact head."""

    MESH_OUT = N_BETA + N_THETA + 3 + 6  # 88

    def __init__(self, config: NetConfig, model: BodyModel,
                 pressure_geom: ImageGeometry, ws_head=False):
        self.config = config
        self.model = model
        self.pressure_geom = pressure_geom
        self.ws_head = ws_head
        rng = np.random.RandomState(config.seed)
        self.params = {}

        # encoder: strided conv stack over the 2-channel input
        c_prev = 2
        for i, c in enumerate(config.enc_channels):
            w, b = _init_conv(rng, c_prev, c, config.kernel)
            self.params[f"enc{i}_w"] = w
            self.params[f"enc{i}_b"] = b
            c_prev = c
        self.latent_channels = c_prev

        # mesh head on pooled latent features
        h = config.hidden
        w, b = _init_dense(rng, c_prev, h)
        self.params["mesh0_w"], self.params["mesh0_b"] = w, b
        # the head output is multiplied by mesh_gain, so init is scaled down
        # to keep epoch-0 outputs gain-independent while Adam's fixed step
        # moves the output mesh_gain times faster
        g = config.mesh_gain
        w, b = _init_dense(rng, h, self.MESH_OUT, scale=0.01 / g)
        b.value[:] /= g
        b.value[N_BETA + N_THETA :] = np.array([0.0, 0.11, 0.15, 1, 0, 0, 0, 1, 0]) / g
        self.params["mesh1_w"], self.params["mesh1_b"] = w, b

        # per-vertex head: shared MLP, max-pool fusion, decoder
        d_in = 0
        t = config.fim
        if t.use_xyz:
            d_in += 6  # posed xyz + template (identity) xyz
        if t.use_image:
            d_in += 2
        if t.use_latent:
            d_in += c_prev
        self.pervertex_in = d_in
        d_in = max(d_in, 1)  # global-only configs feed a zero placeholder column
        w, b = _init_dense(rng, d_in, h)
        self.params["pv0_w"], self.params["pv0_b"] = w, b
        w, b = _init_dense(rng, h, h)
        self.params["pv1_w"], self.params["pv1_b"] = w, b
        fuse_in = 2 * h + (c_prev if t.use_global else 0)
        w, b = _init_dense(rng, fuse_in, h)
        self.params["dec0_w"], self.params["dec0_b"] = w, b
        out_dim = 1 if ws_head else 2
        w, b = _init_dense(rng, h, out_dim, scale=0.01)
        self.params["dec1_w"], self.params["dec1_b"] = w, b
        # zero-initialized gained linear bypass from the fused per-vertex
        # features to the outputs; leaves epoch-0 behaviour untouched while
        # making near-linear feature->pressure relations quickly reachable
        self.params["skip_w"] = ad.parameter(np.zeros((d_in, out_dim)))
        if ws_head:
            # dedicated high-gain weight on the frozen-mesh vertex height:
            # closing the gate on above-plane vertices becomes a single
            # coordinate move instead of a shared-pathway shift
            self.params["wsz_w"] = ad.parameter(np.zeros(1))

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_arrays(self, state):
        for k, p in self.params.items():
            if state[k].shape != p.value.shape:
                raise ShapeMismatch(f"checkpoint tensor '{k}' has wrong shape")
            p.value = np.asarray(state[k], dtype=np.float64)

    # -- forward ------------------------------------------------------------

    def latent_geom(self):
        g = self.pressure_geom
        stride_total = 2 ** len(self.config.enc_channels)
        rows, cols = g.rows, g.cols
        for _ in self.config.enc_channels:
            rows = (rows + 1) // 2
            cols = (cols + 1) // 2
        return ImageGeometry(rows=rows, cols=cols, pitch=g.pitch * stride_total,
                             origin_xy=g.origin_xy)

    def input_image(self, depth, pressure):
        """Stack normalized pressure + body-height channels on the mat grid."""
        g = self.pressure_geom
        if pressure.values.shape != (g.rows, g.cols):
            raise GeometryMismatch("pressure image does not match input geometry")
        dh, dw = depth.values.shape
        if dh % g.rows or dw % g.cols:
            raise GeometryMismatch("depth grid must be an integer multiple of the mat grid")
        fy, fx = dh // g.rows, dw // g.cols
        height = CAMERA_HEIGHT - depth.values
        height = height.reshape(g.rows, fy, g.cols, fx).mean(axis=(1, 3))
        p = pressure.values / self.config.pressure_norm
        return np.stack([p, height])

    def encode(self, x_const):
        h = x_const
        k = self.config.kernel
        pad = k // 2
        for i in range(len(self.config.enc_channels)):
            h = ad.relu(ad.conv2d(h, self.params[f"enc{i}_w"],
                                  self.params[f"enc{i}_b"], stride=2, pad=pad))
        pooled = ad.tmean(h, axis=(1, 2))
        return h, pooled

    def mesh_forward(self, pooled):
        h = ad.relu(ad.dense(pooled, self.params["mesh0_w"], self.params["mesh0_b"]))
        psi = ad.dense(h, self.params["mesh1_w"], self.params["mesh1_b"]) * self.config.mesh_gain
        beta = psi[0:N_BETA]
        theta = psi[N_BETA : N_BETA + N_THETA]
        trans = psi[N_BETA + N_THETA : N_BETA + N_THETA + 3]
        rot6 = psi[N_BETA + N_THETA + 3 :]
        return psi, beta, theta, trans, rot6

    def pervertex_forward(self, features, pooled):
        """features: (N_v, D) Tensor; pooled: (C,) Tensor or None."""
        n_v = features.shape[0]
        if self.pervertex_in == 0:
            features = ad.constant(np.zeros((n_v, 1)))
        h = ad.relu(ad.dense(features, self.params["pv0_w"], self.params["pv0_b"]))
        h = ad.relu(ad.dense(h, self.params["pv1_w"], self.params["pv1_b"]))
        gmax = ad.tmax(h, axis=0)  # (hidden,)
        groups = [h, ad.reshape(gmax, (1, -1)) + ad.constant(np.zeros((n_v, 1)))]
        if self.config.fim.use_global:
            if pooled is None:
                raise ConfigInvalid("use_global requires pooled encoder features")
            groups.append(ad.reshape(pooled, (1, -1)) + ad.constant(np.zeros((n_v, 1))))
        z = ad.concat(groups, axis=1)
        z = ad.relu(ad.dense(z, self.params["dec0_w"], self.params["dec0_b"]))
        out = ad.dense(z, self.params["dec1_w"], self.params["dec1_b"])
        out = out + self.config.skip_gain * ad.matmul(features, self.params["skip_w"])
        return out

    def fim_features(self, mesh_const: PosedMesh, x_const, featmap, vertices=None):
        """``vertices`` may be the vertex Tensor so the xyz feature group
        stays differentiable; registration always bins the constant values."""
        t = self.config.fim
        gathered_image = None
        gathered_latent = None
        if t.use_image:
            pix = register(mesh_const, self.pressure_geom)
            gathered_image = gather(x_const, pix)
        if t.use_latent:
            pix = register(mesh_const, self.latent_geom())
            gathered_latent = gather(featmap, pix)
        template = self.model.template_vertices if t.use_xyz else None
        return fuse(mesh_const, gathered_image, gathered_latent, t,
                    vertices=vertices, template=template)


def _softplus(t):
    """log(1 + exp(t)) built from tape primitives; smooth non-negativity for
    the pressure channel."""
    return ad.log(ad.exp(t) + 1.0)


def _gathered_taxel(net: BodyMapNet, mesh_const: PosedMesh, pressure):
    """Sensed taxel pressure (kPa) under each vertex, or None when the image
    feature group is disabled."""
    if not net.config.fim.use_image:
        return None
    pix = register(mesh_const, net.pressure_geom)
    return ad.constant(pressure.values[pix[:, 0], pix[:, 1]])


def forward_bodymap(net: BodyMapNet, depth, pressure):
    """Full forward pass; returns a dict of Tensors plus the gated inference map."""
    x = ad.constant(net.input_image(depth, pressure))
    featmap, pooled = net.encode(x)
    psi, beta, theta, trans, rot6 = net.mesh_forward(pooled)
    v, j = pose_mesh_graph(net.model, beta, theta, trans, rot6)
    mesh_const = PosedMesh(vertices=v.value, joints=j.value,
                           source_faces=net.model.faces)
    features = net.fim_features(mesh_const, x, featmap, vertices=v)
    out = net.pervertex_forward(features.features, pooled)
    contact_logit = out[:, 1] * net.config.contact_gain
    contact_prob = ad.sigmoid(contact_logit)
    # GT vertex pressure is the sensed taxel value at contact vertices and
    # zero elsewhere (intensive projection), so the head predicts a [0, 1]
    # gate on the sensed value rather than regressing absolute magnitude;
    # off-mat and empty-taxel vertices are exactly silent under the L1 loss
    p_taxel = _gathered_taxel(net, mesh_const, pressure)
    if p_taxel is not None:
        pressure_v = p_taxel * ad.sigmoid(out[:, 0] * net.config.contact_gain)
    else:
        pressure_v = _softplus(out[:, 0]) * net.config.press_scale * contact_prob
    inference_map = pressure_v.value * (contact_prob.value >= 0.5)
    return {
        "psi": psi, "beta": beta, "theta": theta, "trans": trans, "rot6": rot6,
        "vertices": v, "joints": j, "mesh": mesh_const,
        "pressure": pressure_v, "contact_prob": contact_prob,
        "inference_map": inference_map,
    }


def frozen_mesh_outputs(net: BodyMapNet, depth, pressure, sink=0.06):
    """Constant-valued mesh/feature context from a frozen pre-trained net.

    The predicted mesh is grounded so its lowest vertex sits ``sink`` meters
    below the mattress plane: the bed height is known, bodies sink into the
    mattress, and the above-plane pressure regularizer needs a meaningful
    contact band on the frozen mesh."""
    out = forward_bodymap(net, depth, pressure)
    mesh = out["mesh"]
    drop = mesh.vertices[:, 2].min() + sink
    grounded = PosedMesh(
        vertices=mesh.vertices - np.array([0.0, 0.0, drop]),
        joints=mesh.joints - np.array([0.0, 0.0, drop]),
        source_faces=mesh.source_faces,
    )
    x = net.input_image(depth, pressure)
    featmap, pooled = net.encode(ad.constant(x))
    return {
        "mesh": grounded,
        "x": x,
        "featmap": featmap.value,
        "pooled": pooled.value,
    }


def forward_bodymap_ws(ws_net: BodyMapNet, frozen):
    """Pressure-only head over frozen mesh + features."""
    features = ws_net.fim_features(frozen["mesh"], ad.constant(frozen["x"]),
                                   ad.constant(frozen["featmap"]))
    pooled = ad.constant(frozen["pooled"]) if ws_net.config.fim.use_global else None
    out = ws_net.pervertex_forward(features.features, pooled)
    if ws_net.config.fim.use_image:
        pix = register(frozen["mesh"], ws_net.pressure_geom)
        press = frozen["x"][0] * ws_net.config.pressure_norm
        if ws_net.config.ws_gather_sigma > 0.0:
            press = ndimage.gaussian_filter(press, ws_net.config.ws_gather_sigma,
                                            mode="constant")
        taxel = press[pix[:, 0], pix[:, 1]]
        # the gate starts open, so epoch 0 is the naive vertical projection
        # (every binned vertex inherits its taxel); training learns suppression
        z = frozen["mesh"].vertices[:, 2] / WS_Z_SCALE
        logit = (out[:, 0] * ws_net.config.contact_gain
                 + ws_net.config.ws_gate_bias
                 - ws_net.params["wsz_w"] * ad.constant(z) * WS_Z_GAIN)
        return ad.constant(taxel) * ad.sigmoid(logit)
    return _softplus(out[:, 0]) * ws_net.config.press_scale


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr=1e-4, weight_decay=0.0):
    return AdamState(lr=lr, weight_decay=weight_decay,
                     m=[np.zeros_like(p.value) for p in params],
                     v=[np.zeros_like(p.value) for p in params])


def adam_step(params, state: AdamState):
    """Classic bias-corrected Adam; weight decay added to the gradient."""
    state.step_count += 1
    t = state.step_count
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        if g.shape != p.value.shape:
            raise ShapeMismatch("gradient shape does not match parameter")
        if state.weight_decay:
            g = g + state.weight_decay * p.value
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        mhat = state.m[i] / (1.0 - state.beta1**t)
        vhat = state.v[i] / (1.0 - state.beta2**t)
        p.value = p.value - state.lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 5e-4
    weights: LossWeights = LossWeights()
    seed: int = 0
    augment_rotation: bool = False
    augment_erasing: bool = False
    supervise_pressure: bool = True  # lambda2/lambda3 terms (off for mesh-only pretraining)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr < 0:
            raise ConfigInvalid("invalid training configuration")

    def to_json(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "weight_decay": self.weight_decay,
                "weights": self.weights.to_json(), "seed": self.seed,
                "augment_rotation": self.augment_rotation,
                "augment_erasing": self.augment_erasing,
                "supervise_pressure": self.supervise_pressure}

    @staticmethod
    def from_json(d):
        kw = {}
        for k in ("epochs", "batch_size", "seed"):
            if k in d:
                kw[k] = int(d[k])
        for k in ("lr", "weight_decay"):
            if k in d:
                kw[k] = float(d[k])
        for k in ("augment_rotation", "augment_erasing", "supervise_pressure"):
            if k in d:
                kw[k] = bool(d[k])
        if "weights" in d:
            kw["weights"] = LossWeights.from_json(d["weights"])
        return TrainConfig(**kw)


def _augment_sample(sample, rng, config: TrainConfig):
    """In-plane rotation of both images + GT by one angle; zero-fill erasing
    on the inputs only."""
    from .body_model import BodyParams
    from .projection import DepthImage, PressureImage
    from .synth import SceneSample

    depth_v = sample.depth.values.copy()
    press_v = sample.pressure.values.copy()
    params = sample.gt_params
    mesh = sample.gt_mesh

    if config.augment_rotation:
        ang = rng.uniform(-10.0, 10.0)
        press_v = ndimage.rotate(press_v, ang, reshape=False, order=1, cval=0.0)
        press_v = np.maximum(press_v, 0.0)
        depth_v = ndimage.rotate(depth_v, ang, reshape=False, order=1,
                                 cval=CAMERA_HEIGHT)
        # image rows run along +y, so the matching world rotation is about +z
        a = np.deg2rad(ang)
        rz = np.array([[np.cos(a), -np.sin(a), 0.0],
                       [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
        params = BodyParams(
            beta=params.beta, theta=params.theta,
            root_trans=rz @ params.root_trans,
            root_rot_x=rz @ params.root_rot_x, root_rot_y=rz @ params.root_rot_y,
            gender=params.gender,
        )
        mesh = PosedMesh(vertices=mesh.vertices @ rz.T, joints=mesh.joints @ rz.T,
                         source_faces=mesh.source_faces)
    if config.augment_erasing:
        for img, shape in ((press_v, press_v.shape), (depth_v, depth_v.shape)):
            h = rng.randint(2, max(shape[0] // 4, 3))
            w = rng.randint(2, max(shape[1] // 4, 3))
            r = rng.randint(0, shape[0] - h)
            c = rng.randint(0, shape[1] - w)
            img[r : r + h, c : c + w] = 0.0

    return SceneSample(
        depth=DepthImage(values=depth_v, geom=sample.depth.geom),
        pressure=PressureImage(values=press_v, geom=sample.pressure.geom),
        gender=sample.gender, gt_params=params, gt_mesh=mesh,
        gt_vpm=sample.gt_vpm, gt_contact=sample.gt_contact,
        pose_category=sample.pose_category, cover=sample.cover,
    )


def supervised_sample_loss(net: BodyMapNet, sample, stats: NormStats,
                           weights: LossWeights, supervise_pressure=True):
    out = forward_bodymap(net, sample.depth, sample.pressure)
    gt = sample.gt_params
    l_smpl = loss_smpl(out["beta"], out["theta"], out["rot6"], out["joints"],
                       gt.beta, gt.theta, gt.rot6(), sample.gt_mesh.joints, stats)
    l_v2v = loss_v2v(out["vertices"], sample.gt_mesh.vertices, stats)
    if supervise_pressure:
        l_p3d = loss_p3d(out["pressure"], sample.gt_vpm.pressure, stats)
        l_cont = loss_contact(out["contact_prob"], sample.gt_contact.contact, stats)
    else:
        l_p3d = ad.constant(0.0)
        l_cont = ad.constant(0.0)
    return loss_total_supervised(l_smpl, l_v2v, l_p3d, l_cont, weights), out


def train_supervised(net: BodyMapNet, samples, stats: NormStats,
                     config: TrainConfig):
    """Epoch loop with seeded shuffling and Adam; returns per-epoch mean loss."""
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no training samples")
    rng = np.random.RandomState(config.seed)
    params = net.parameters()
    opt = adam_init(params, lr=config.lr, weight_decay=config.weight_decay)
    history = []
    n = len(samples)
    bs = min(config.batch_size, n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            net.zero_grad()
            for i in idx:
                s = samples[i]
                if config.augment_rotation or config.augment_erasing:
                    s = _augment_sample(s, rng, config)
                total, _ = supervised_sample_loss(net, s, stats, config.weights,
                                                  config.supervise_pressure)
                (total * (1.0 / len(idx))).backward()
                epoch_loss += float(total.value)
            adam_step(params, opt)
        history.append(epoch_loss / n)
    return history


def train_ws(ws_net: BodyMapNet, frozen_net: BodyMapNet, samples,
             config: TrainConfig):
    """Weakly-supervised loop: only depth + pressure images are read; the
    frozen mesh context is computed once per sample and cached."""
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no training samples")
    rng = np.random.RandomState(config.seed)
    frozen = [frozen_mesh_outputs(frozen_net, s.depth, s.pressure) for s in samples]
    sensed = [s.pressure.values for s in samples]
    geom = frozen_net.pressure_geom
    params = ws_net.parameters()
    opt = adam_init(params, lr=config.lr, weight_decay=config.weight_decay)
    history = []
    n = len(samples)
    bs = min(config.batch_size, n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            ws_net.zero_grad()
            for i in idx:
                pred = forward_bodymap_ws(ws_net, frozen[i])
                proj = reproject_2d_op(pred, frozen[i]["mesh"], geom)
                l2d = loss_p2d(proj, sensed[i])
                lreg = loss_preg(pred, frozen[i]["mesh"])
                total = loss_total_ws(l2d, lreg, config.weights)
                (total * (1.0 / len(idx))).backward()
                epoch_loss += float(total.value)
            adam_step(params, opt)
        history.append(epoch_loss / n)
    return history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(net: BodyMapNet, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arch = {"format": "pressmap-net-v1", "ws_head": net.ws_head,
            "config": net.config.to_json(),
            "pressure_geom": net.pressure_geom.to_json(),
            "param_names": sorted(net.params)}
    (path / "arch.json").write_text(
        json.dumps(arch, sort_keys=True, separators=(",", ":")) + "\n")
    for k in sorted(net.params):
        pmt1.write_tensor(path / f"{k}.pmt1", net.params[k].value)


def load_checkpoint(path, model: BodyModel) -> BodyMapNet:
    path = Path(path)
    arch = json.loads((path / "arch.json").read_text())
    if arch.get("format") != "pressmap-net-v1":
        raise ConfigInvalid(f"unrecognized checkpoint at {path}")
    net = BodyMapNet(NetConfig.from_json(arch["config"]), model,
                     ImageGeometry.from_json(arch["pressure_geom"]),
                     ws_head=arch["ws_head"])
    net.load_state_arrays({k: pmt1.read_tensor(path / f"{k}.pmt1")
                           for k in arch["param_names"]})
    return net


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _eval_threads(n_threads):
    import os

    if n_threads is None:
        n_threads = int(os.environ.get("PRESSMAP_THREADS", "1"))
    return max(1, n_threads)


def evaluate_supervised(net: BodyMapNet, samples, table, n_threads=None):
    """Per-sample metric reports in dataset order; the gated inference map is
    the pressure prediction."""
    from concurrent.futures import ThreadPoolExecutor

    from .metrics import evaluate_sample

    def one(sample):
        out = forward_bodymap(net, sample.depth, sample.pressure)
        return evaluate_sample(
            out["joints"].value, out["vertices"].value, out["beta"].value,
            out["inference_map"],
            sample.gt_mesh.joints, sample.gt_mesh.vertices,
            sample.gt_params.beta, sample.gt_vpm.pressure,
            net.model, table)

    n = _eval_threads(n_threads)
    samples = list(samples)
    if n == 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, samples))


def evaluate_ws(ws_net: BodyMapNet, frozen_net: BodyMapNet, samples, table,
                n_threads=None):
    """Reports for a WS pressure head over a frozen mesh net."""
    from concurrent.futures import ThreadPoolExecutor

    from .metrics import evaluate_sample

    def one(sample):
        out = forward_bodymap(frozen_net, sample.depth, sample.pressure)
        frozen = frozen_mesh_outputs(frozen_net, sample.depth, sample.pressure)
        pred_p = forward_bodymap_ws(ws_net, frozen).value
        return evaluate_sample(
            out["joints"].value, out["vertices"].value, out["beta"].value,
            pred_p,
            sample.gt_mesh.joints, sample.gt_mesh.vertices,
            sample.gt_params.beta, sample.gt_vpm.pressure,
            frozen_net.model, table)

    n = _eval_threads(n_threads)
    samples = list(samples)
    if n == 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, samples))
