import numpy as np
import pytest

from pressmap.body_model import PART_NAMES
from pressmap.errors import DimensionMismatch, EmptyMask
from pressmap.metrics import (
    MetricReport,
    evaluate_sample,
    mean_report,
    mpjpe,
    per_part_v2vp,
    pve,
    shape_errors,
    smooth_kring,
    v2vp,
    v2vp_smoothed,
)


def test_mpjpe_brute_force_oracle(rng):
    for _ in range(20):
        a, b = rng.normal(size=(24, 3)), rng.normal(size=(24, 3))
        want = np.mean([np.sqrt(((a[j] - b[j]) ** 2).sum()) for j in range(24)])
        assert mpjpe(a, b) == pytest.approx(want * 1000, rel=1e-12)


def test_pve_brute_force_oracle(rng):
    a, b = rng.normal(size=(100, 3)), rng.normal(size=(100, 3))
    want = np.mean([np.linalg.norm(a[i] - b[i]) for i in range(100)]) * 1000
    assert pve(a, b) == pytest.approx(want, rel=1e-12)


def test_zero_error_at_identity(rng):
    a = rng.normal(size=(24, 3))
    assert mpjpe(a, a) == 0.0
    assert v2vp(a[:, 0], a[:, 0]) == 0.0


def test_v2vp_brute_force_oracle(rng):
    a, b = rng.normal(size=200), rng.normal(size=200)
    want = sum((x - y) ** 2 for x, y in zip(a, b)) / 200
    assert v2vp(a, b) == pytest.approx(want, rel=1e-12)


def test_units_scale_mm_and_kpa2(rng):
    a = np.zeros((24, 3))
    b = np.zeros((24, 3))
    b[:, 0] = 0.05  # 5 cm everywhere
    assert mpjpe(a, b) == pytest.approx(50.0)
    assert v2vp(np.zeros(10), np.full(10, 2.0)) == pytest.approx(4.0)


def test_smoothing_brute_force_oracle(model, table, rng):
    p = rng.normal(size=model.n_vertices)
    out = smooth_kring(p, table.ring1).pressure
    for v in range(0, model.n_vertices, 53):
        nb = list(table.ring1[v]) + [v]
        assert out[v] == pytest.approx(np.mean(p[nb]), rel=1e-12)


def test_smoothing_preserves_constant_maps_exactly(model, table):
    const = np.full(model.n_vertices, 3.25)
    assert np.array_equal(smooth_kring(const, table.ring1).pressure, const)
    assert np.array_equal(smooth_kring(const, table.ring2).pressure, const)


def test_smoothed_v2vp_brute_force(model, table, rng):
    a, b = rng.normal(size=model.n_vertices), rng.normal(size=model.n_vertices)
    sa = smooth_kring(a, table.ring2).pressure
    sb = smooth_kring(b, table.ring2).pressure
    assert v2vp_smoothed(a, b, table.ring2) == pytest.approx(
        np.mean((sa - sb) ** 2), rel=1e-12)


def test_per_part_oracle(model, rng):
    a, b = rng.normal(size=model.n_vertices), rng.normal(size=model.n_vertices)
    out = per_part_v2vp(a, b, model.part_masks)
    assert set(out) == set(PART_NAMES)
    for name in PART_NAMES:
        m = model.part_masks[name]
        assert out[name] == pytest.approx(np.mean((a[m] - b[m]) ** 2), rel=1e-12)


def test_per_part_empty_mask_rejected(rng):
    masks = {name: np.arange(3) for name in PART_NAMES}
    masks["head"] = np.array([], dtype=np.int64)
    with pytest.raises(EmptyMask):
        per_part_v2vp(rng.normal(size=10), rng.normal(size=10), masks)


def test_shape_errors_zero_at_same_beta(model, rng):
    beta = rng.normal(size=10)
    errs = shape_errors(beta, beta, model)
    assert all(v == 0.0 for v in errs.values())
    assert set(errs) == {"height", "chest", "waist", "hips"}


def test_evaluate_sample_zero_at_ground_truth(model, table, small_samples):
    s = small_samples[0]
    r = evaluate_sample(s.gt_mesh.joints, s.gt_mesh.vertices, s.gt_params.beta,
                        s.gt_vpm.pressure, s.gt_mesh.joints, s.gt_mesh.vertices,
                        s.gt_params.beta, s.gt_vpm.pressure, model, table)
    assert r.mpjpe_mm == 0.0
    assert r.pve_mm == 0.0
    assert r.v2vp == 0.0
    assert r.v2vp_1ea == 0.0
    assert all(v == 0.0 for v in r.per_part_v2vp.values())


def test_mean_report_averages(model, table, small_samples, rng):
    reports = []
    for s in small_samples[:3]:
        noise = rng.normal(0, 0.01, size=s.gt_mesh.joints.shape)
        reports.append(evaluate_sample(
            s.gt_mesh.joints + noise, s.gt_mesh.vertices, s.gt_params.beta,
            s.gt_vpm.pressure, s.gt_mesh.joints, s.gt_mesh.vertices,
            s.gt_params.beta, s.gt_vpm.pressure, model, table))
    mean = mean_report(reports)
    assert mean.mpjpe_mm == pytest.approx(np.mean([r.mpjpe_mm for r in reports]))
    assert mean.per_part_v2vp["head"] == pytest.approx(
        np.mean([r.per_part_v2vp["head"] for r in reports]))


def test_mean_report_empty_rejected():
    with pytest.raises(DimensionMismatch):
        mean_report([])


def test_shape_validation(rng):
    with pytest.raises(DimensionMismatch):
        mpjpe(rng.normal(size=(24, 3)), rng.normal(size=(23, 3)))
    with pytest.raises(DimensionMismatch):
        v2vp(rng.normal(size=5), rng.normal(size=6))


def test_report_json_round_trippable(model, table, small_samples):
    s = small_samples[0]
    r = evaluate_sample(s.gt_mesh.joints, s.gt_mesh.vertices, s.gt_params.beta,
                        s.gt_vpm.pressure, s.gt_mesh.joints, s.gt_mesh.vertices,
                        s.gt_params.beta, s.gt_vpm.pressure, model, table)
    import json

    d = json.loads(json.dumps(r.to_json()))
    assert d["mpjpe_mm"] == 0.0
    assert len(d["per_part_v2vp_kpa2"]) == 14
