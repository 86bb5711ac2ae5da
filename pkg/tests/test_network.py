import numpy as np
import pytest

from pressmap import autodiff as ad
from pressmap.errors import ConfigInvalid, EmptyDataset, GeometryMismatch, ShapeMismatch
from pressmap.fim import FimToggles
from pressmap.network import (
    AdamState,
    BodyMapNet,
    NetConfig,
    TrainConfig,
    _augment_sample,
    adam_init,
    adam_step,
    evaluate_supervised,
    evaluate_ws,
    forward_bodymap,
    forward_bodymap_ws,
    frozen_mesh_outputs,
    load_checkpoint,
    save_checkpoint,
    train_supervised,
    train_ws,
)
from pressmap.projection import DepthImage
from pressmap.synth import DEFAULT_PRESSURE_GEOM


@pytest.fixture()
def net(model):
    return BodyMapNet(NetConfig(), model, DEFAULT_PRESSURE_GEOM)


def test_adam_matches_reference_recurrence(rng):
    """Three steps against a hand-evaluated bias-corrected Adam recurrence."""
    p = ad.parameter(rng.normal(size=(4,)))
    ref = p.value.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    lr, b1, b2, eps, wd = 1e-2, 0.9, 0.999, 1e-8, 0.1
    opt = adam_init([p], lr=lr, weight_decay=wd)
    for t in range(1, 4):
        g_raw = rng.normal(size=4)
        p.grad = g_raw.copy()
        adam_step([p], opt)
        g = g_raw + wd * ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert np.allclose(p.value, ref, rtol=1e-14, atol=0)
    assert opt.step_count == 3


def test_adam_zero_lr_is_noop(rng):
    p = ad.parameter(rng.normal(size=(3, 3)))
    before = p.value.copy()
    opt = adam_init([p], lr=0.0)
    p.grad = rng.normal(size=(3, 3))
    adam_step([p], opt)
    assert np.array_equal(p.value, before)


def test_adam_shape_mismatch_rejected(rng):
    p = ad.parameter(np.zeros(3))
    opt = adam_init([p])
    p.grad = np.zeros(4)
    with pytest.raises(ShapeMismatch):
        adam_step([p], opt)


def test_configs_json_round_trip():
    nc = NetConfig(hidden=32, fim=FimToggles(use_global=True), mesh_gain=5.0)
    assert NetConfig.from_json(nc.to_json()) == nc
    tc = TrainConfig(epochs=3, lr=2e-4, augment_rotation=True,
                     supervise_pressure=False)
    assert TrainConfig.from_json(tc.to_json()) == tc
    with pytest.raises(ConfigInvalid):
        TrainConfig(batch_size=0)


def test_train_defaults_match_protocol():
    tc = TrainConfig()
    assert (tc.batch_size, tc.lr, tc.weight_decay) == (64, 1e-4, 5e-4)


def test_forward_shapes_and_gating(net, model, small_samples):
    s = small_samples[0]
    out = forward_bodymap(net, s.depth, s.pressure)
    assert out["vertices"].value.shape == (model.n_vertices, 3)
    assert out["joints"].value.shape == (24, 3)
    assert out["pressure"].value.shape == (model.n_vertices,)
    assert out["contact_prob"].value.shape == (model.n_vertices,)
    assert ((out["contact_prob"].value >= 0) & (out["contact_prob"].value <= 1)).all()
    gate = out["contact_prob"].value >= 0.5
    assert np.array_equal(out["inference_map"], out["pressure"].value * gate)


def test_skip_starts_at_zero_and_output_is_gain_free(model, small_samples):
    s = small_samples[0]
    outs = []
    for gain in (1.0, 20.0):
        n = BodyMapNet(NetConfig(skip_gain=gain), model, DEFAULT_PRESSURE_GEOM)
        assert not n.params["skip_w"].value.any()
        outs.append(forward_bodymap(n, s.depth, s.pressure)["pressure"].value)
    assert np.array_equal(outs[0], outs[1])


def test_input_image_validates_geometry(net, small_samples):
    s = small_samples[0]
    with pytest.raises(GeometryMismatch):
        net.input_image(s.depth, type(s.pressure)(
            values=np.zeros((3, 3)), geom=s.depth.geom))
    from pressmap.projection import ImageGeometry

    g = s.depth.geom
    bad_geom = ImageGeometry(rows=100, cols=54, pitch=g.pitch,
                             origin_xy=g.origin_xy)
    bad_depth = DepthImage(values=np.full((100, 54), 2.0), geom=bad_geom)
    with pytest.raises(GeometryMismatch):
        net.input_image(bad_depth, s.pressure)


def test_train_supervised_deterministic(model, small_samples, small_stats):
    cfg = TrainConfig(epochs=2, batch_size=3, seed=5)
    states = []
    for _ in range(2):
        n = BodyMapNet(NetConfig(), model, DEFAULT_PRESSURE_GEOM)
        hist = train_supervised(n, small_samples[:3], small_stats, cfg)
        assert len(hist) == 2
        states.append(n.state_arrays())
    for k in states[0]:
        assert np.array_equal(states[0][k], states[1][k]), k


def test_train_zero_lr_leaves_params(net, small_samples, small_stats):
    before = net.state_arrays()
    train_supervised(net, small_samples[:2], small_stats,
                     TrainConfig(epochs=1, lr=0.0, weight_decay=0.0))
    after = net.state_arrays()
    for k in before:
        assert np.array_equal(before[k], after[k]), k


def test_train_rejects_empty(net, small_stats):
    with pytest.raises(EmptyDataset):
        train_supervised(net, [], small_stats, TrainConfig(epochs=1))


def test_checkpoint_round_trip(net, model, small_samples, tmp_path):
    s = small_samples[0]
    want = forward_bodymap(net, s.depth, s.pressure)
    save_checkpoint(net, tmp_path / "ck")
    net2 = load_checkpoint(tmp_path / "ck", model)
    assert net2.config == net.config
    got = forward_bodymap(net2, s.depth, s.pressure)
    assert np.array_equal(want["vertices"].value, got["vertices"].value)
    assert np.array_equal(want["pressure"].value, got["pressure"].value)
    assert np.array_equal(want["inference_map"], got["inference_map"])


def test_checkpoint_rejects_wrong_shape(net):
    state = net.state_arrays()
    state["mesh0_w"] = state["mesh0_w"][:, :-1]
    with pytest.raises(ShapeMismatch):
        net.load_state_arrays(state)


def test_ws_training_runs_without_vertex_pressure(model, small_samples):
    frozen = BodyMapNet(NetConfig(), model, DEFAULT_PRESSURE_GEOM)
    ws = BodyMapNet(NetConfig(seed=1), model, DEFAULT_PRESSURE_GEOM, ws_head=True)
    hist = train_ws(ws, frozen, small_samples[:2],
                    TrainConfig(epochs=2, batch_size=2))
    assert len(hist) == 2
    assert all(np.isfinite(h) for h in hist)
    fz = frozen_mesh_outputs(frozen, small_samples[0].depth,
                             small_samples[0].pressure)
    pred = forward_bodymap_ws(ws, fz)
    assert pred.value.shape == (model.n_vertices,)


def test_ws_head_has_single_output(model):
    ws = BodyMapNet(NetConfig(), model, DEFAULT_PRESSURE_GEOM, ws_head=True)
    assert ws.params["dec1_w"].value.shape[1] == 1


def test_augment_rotation_consistency(small_samples, rng):
    """The rotated GT mesh still matches the rotated images: total pressure
    mass is conserved up to interpolation, and the mesh rotation is rigid."""
    s = small_samples[0]
    cfg = TrainConfig(augment_rotation=True)
    out = _augment_sample(s, rng, cfg)
    assert out.pressure.values.min() >= 0.0
    assert out.pressure.values.sum() == pytest.approx(
        s.pressure.values.sum(), rel=0.1)
    d = np.linalg.norm(out.gt_mesh.vertices - s.gt_mesh.vertices, axis=1)
    assert d.max() > 0.0
    pair_before = np.linalg.norm(s.gt_mesh.vertices[0] - s.gt_mesh.vertices[100])
    pair_after = np.linalg.norm(out.gt_mesh.vertices[0] - out.gt_mesh.vertices[100])
    assert pair_after == pytest.approx(pair_before, rel=1e-12)
    assert np.array_equal(out.gt_vpm.pressure, s.gt_vpm.pressure)


def test_augment_erasing_zeroes_a_block(small_samples, rng):
    s = small_samples[0]
    depth_before = s.depth.values.copy()
    out = _augment_sample(s, rng, TrainConfig(augment_erasing=True))
    assert np.array_equal(s.depth.values, depth_before)  # source untouched
    assert (out.pressure.values == 0).sum() >= (s.pressure.values == 0).sum()
    assert not np.array_equal(out.depth.values, s.depth.values)


def test_evaluate_supervised_order_and_threads(net, table, small_samples,
                                               monkeypatch):
    serial = evaluate_supervised(net, small_samples[:3], table, n_threads=1)
    threaded = evaluate_supervised(net, small_samples[:3], table, n_threads=3)
    assert len(serial) == 3
    for a, b in zip(serial, threaded):
        assert a.mpjpe_mm == b.mpjpe_mm
        assert a.v2vp == b.v2vp
    monkeypatch.setenv("PRESSMAP_THREADS", "2")
    env_runs = evaluate_supervised(net, small_samples[:3], table)
    assert env_runs[0].mpjpe_mm == serial[0].mpjpe_mm


def test_evaluate_ws_reports(model, table, small_samples):
    frozen = BodyMapNet(NetConfig(), model, DEFAULT_PRESSURE_GEOM)
    ws = BodyMapNet(NetConfig(seed=1), model, DEFAULT_PRESSURE_GEOM, ws_head=True)
    reports = evaluate_ws(ws, frozen, small_samples[:2], table)
    assert len(reports) == 2
    assert all(np.isfinite(r.v2vp) for r in reports)


def test_global_toggle_requires_pooled(model, small_samples):
    n = BodyMapNet(NetConfig(fim=FimToggles(use_global=True)), model,
                   DEFAULT_PRESSURE_GEOM)
    feats = ad.constant(np.zeros((model.n_vertices, n.pervertex_in)))
    with pytest.raises(ConfigInvalid):
        n.pervertex_forward(feats, None)
