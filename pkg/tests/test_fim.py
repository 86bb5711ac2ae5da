import numpy as np
import pytest

from pressmap import autodiff as ad
from pressmap.body_model import PosedMesh
from pressmap.errors import IndexOutOfRange, NoFeaturesEnabled
from pressmap.fdcheck import check_grad
from pressmap.fim import FimToggles, VertexFeatureMatrix, fuse, gather, register
from pressmap.projection import ImageGeometry

GEOM = ImageGeometry(rows=4, cols=3, pitch=0.5, origin_xy=(0.0, 0.0))


def _mesh(vertices):
    vertices = np.asarray(vertices, dtype=np.float64)
    return PosedMesh(vertices=vertices, joints=np.zeros((1, 3)),
                     source_faces=np.zeros((0, 3), dtype=np.int64))


def test_register_clamps_out_of_frame():
    mesh = _mesh([[0.2, 0.2, 0.0], [-5.0, 0.0, 0.1], [5.0, 50.0, 0.2]])
    pix = register(mesh, GEOM)
    assert pix.shape == (3, 2)
    assert list(pix[0]) == [0, 0]
    assert list(pix[1]) == [0, 0]      # clamped low
    assert list(pix[2]) == [3, 2]      # clamped high


def test_register_uses_same_binning_as_taxels():
    from pressmap.projection import bin_xy

    mesh = _mesh([[0.6, 1.1, 0.3]])
    rows, cols = bin_xy(mesh.vertices[:, :2], GEOM)
    assert list(register(mesh, GEOM)[0]) == [rows[0], cols[0]]


def test_gather_values_and_scatter_grad(rng):
    fmap = rng.normal(size=(2, 4, 3))
    pix = np.array([[0, 0], [2, 1], [0, 0]])
    out = gather(fmap, pix)
    assert out.value.shape == (3, 2)
    assert np.allclose(out.value[1], fmap[:, 2, 1])
    # repeated pixel accumulates both vertices' gradients
    t = ad.parameter(fmap)
    ad.tsum(gather(t, pix)).backward()
    assert t.grad[0, 0, 0] == pytest.approx(2.0)
    assert t.grad[0, 2, 1] == pytest.approx(1.0)


def test_gather_bounds_checked(rng):
    with pytest.raises(IndexOutOfRange):
        gather(np.zeros((1, 2, 2)), np.array([[2, 0]]))


def test_gather_gradcheck(rng):
    fmap = rng.normal(size=(3, 4, 3))
    pix = np.stack([rng.randint(0, 4, 10), rng.randint(0, 3, 10)], axis=1)
    u = rng.normal(size=(10, 3))
    err = check_grad(lambda f: ad.tsum(gather(f, pix) * ad.constant(u)), [fmap])
    assert err < 1e-6


def test_fuse_layout_order(rng):
    mesh = _mesh(rng.normal(size=(5, 3)))
    gi = rng.normal(size=(5, 2))
    gl = rng.normal(size=(5, 4))
    out = fuse(mesh, gi, gl, FimToggles())
    assert list(out.layout) == ["vertex_xyz", "image_feats", "latent_feats"]
    assert out.features.value.shape == (5, 9)
    assert np.allclose(out.features.value[:, :3], mesh.vertices)
    assert np.allclose(out.features.value[:, 3:5], gi)
    assert np.allclose(out.features.value[:, 5:], gl)


def test_fuse_respects_toggles(rng):
    mesh = _mesh(rng.normal(size=(5, 3)))
    out = fuse(mesh, None, None,
               FimToggles(use_xyz=True, use_image=False, use_latent=False))
    assert out.features.value.shape == (5, 3)


def test_fuse_differentiable_vertices(rng):
    mesh = _mesh(rng.normal(size=(5, 3)))
    v = ad.parameter(mesh.vertices.copy())
    out = fuse(mesh, None, None,
               FimToggles(use_xyz=True, use_image=False, use_latent=False),
               vertices=v)
    ad.tsum(out.features).backward()
    assert np.allclose(v.grad, 1.0)


def test_fuse_global_only_empty_matrix(rng):
    mesh = _mesh(rng.normal(size=(5, 3)))
    out = fuse(mesh, None, None,
               FimToggles(use_xyz=False, use_image=False, use_latent=False,
                          use_global=True))
    assert out.features.value.shape == (5, 0)


def test_fuse_missing_features_rejected(rng):
    mesh = _mesh(rng.normal(size=(5, 3)))
    with pytest.raises(NoFeaturesEnabled):
        fuse(mesh, None, None, FimToggles(use_image=True, use_latent=False))


def test_all_toggles_off_rejected():
    with pytest.raises(NoFeaturesEnabled):
        FimToggles(use_xyz=False, use_image=False, use_latent=False,
                   use_global=False)


def test_toggles_json_round_trip():
    t = FimToggles(use_xyz=False, use_image=True, use_latent=False,
                   use_global=True)
    assert FimToggles.from_json(t.to_json()) == t
