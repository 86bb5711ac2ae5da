import numpy as np
import pytest

from pressmap import autodiff as ad
from pressmap.body_model import PosedMesh
from pressmap.errors import GeometryMismatch, NegativePressure
from pressmap.fdcheck import check_grad
from pressmap.projection import (
    ImageGeometry,
    PressureImage,
    VertexPressureMap,
    bin_xy,
    contact_from_pressure,
    project_gt,
    reproject_2d,
    reproject_2d_op,
    reproject_2d_vjp,
    taxel_of_point,
)

GEOM = ImageGeometry(rows=4, cols=3, pitch=0.5, origin_xy=(0.0, 0.0))


def _mesh(vertices):
    vertices = np.asarray(vertices, dtype=np.float64)
    return PosedMesh(vertices=vertices, joints=np.zeros((1, 3)),
                     source_faces=np.zeros((0, 3), dtype=np.int64))


def test_bin_xy_half_open_edges():
    xy = np.array([
        [0.0, 0.0],    # corner -> (0, 0)
        [0.499, 0.0],  # still col 0
        [0.5, 0.0],    # boundary -> col 1
        [1.499, 1.999],
    ])
    rows, cols = bin_xy(xy, GEOM)
    assert list(cols) == [0, 0, 1, 2]
    assert list(rows) == [0, 0, 0, 3]


def test_taxel_of_point_matches_bin():
    img = PressureImage(values=np.arange(12, dtype=np.float64).reshape(4, 3),
                        geom=GEOM)
    assert taxel_of_point(np.array([0.6, 1.1]), img) == (2, 1)


def test_project_gt_intensive_and_gated():
    vals = np.zeros((4, 3))
    vals[1, 2] = 7.0
    img = PressureImage(values=vals, geom=GEOM)
    mesh = _mesh([
        [1.2, 0.6, 0.0],    # taxel (1,2), touching -> 7.0
        [1.2, 0.6, 0.005],  # within z_eps -> 7.0 (intensive, not split)
        [1.2, 0.6, 0.5],    # too high -> 0
        [0.2, 0.2, 0.0],    # empty taxel -> 0
        [-1.0, 0.0, 0.0],   # off-grid -> 0
    ])
    vpm = project_gt(img, mesh, z_eps=0.01)
    assert np.allclose(vpm.pressure, [7.0, 7.0, 0.0, 0.0, 0.0])


def test_contact_from_pressure_binary():
    c = contact_from_pressure(VertexPressureMap(np.array([0.0, 2.0, 0.1])))
    assert np.array_equal(c.contact, [0.0, 1.0, 1.0])
    with pytest.raises(NegativePressure):
        contact_from_pressure(VertexPressureMap(np.array([-1.0])))


def test_reproject_mean_per_taxel():
    mesh = _mesh([
        [0.2, 0.2, 0.0],
        [0.3, 0.3, 0.0],  # same taxel (0, 0)
        [1.2, 0.6, 0.0],  # taxel (1, 2)
        [-5.0, 0.0, 0.0],  # outside: ignored
    ])
    out = reproject_2d(VertexPressureMap(np.array([2.0, 4.0, 5.0, 99.0])),
                       mesh, GEOM)
    assert out.values[0, 0] == pytest.approx(3.0)
    assert out.values[1, 2] == pytest.approx(5.0)
    assert out.values.sum() == pytest.approx(8.0)


def test_round_trip_on_flat_contact_scene(rng):
    """project then reproject reproduces active taxels exactly when every
    binned vertex is a contact vertex."""
    vals = np.zeros((4, 3))
    vals[0, 0], vals[2, 1] = 3.0, 8.0
    img = PressureImage(values=vals, geom=GEOM)
    mesh = _mesh([
        [0.1, 0.1, 0.0], [0.4, 0.3, 0.0],  # taxel (0,0)
        [0.8, 1.2, 0.0],                   # taxel (2,1)
    ])
    vpm = project_gt(img, mesh, z_eps=0.01)
    back = reproject_2d(vpm, mesh, GEOM)
    assert np.allclose(back.values[vals > 0], vals[vals > 0], atol=1e-12)


def test_adjoint_identity(rng):
    """<u, A v> == <A^T u, v> for the reprojection linear map."""
    mesh = _mesh(np.column_stack([
        rng.uniform(0, 1.5, 40), rng.uniform(0, 2.0, 40), np.zeros(40)]))
    for _ in range(5):
        v = rng.normal(size=40)
        u = rng.normal(size=(4, 3))
        av = reproject_2d(VertexPressureMap(v), mesh, GEOM).values
        atu = reproject_2d_vjp(u, mesh, GEOM)
        assert abs(np.sum(u * av) - np.sum(atu * v)) < 1e-12


def test_reproject_op_gradcheck(rng):
    mesh = _mesh(np.column_stack([
        rng.uniform(0, 1.5, 25), rng.uniform(0, 2.0, 25), np.zeros(25)]))
    u = rng.normal(size=(4, 3))
    err = check_grad(
        lambda p: ad.tsum(reproject_2d_op(p, mesh, GEOM) * ad.constant(u)),
        [rng.uniform(0, 5, 25)])
    assert err < 1e-6


def test_geometry_validation():
    with pytest.raises(GeometryMismatch):
        ImageGeometry(rows=0, cols=3, pitch=0.5, origin_xy=(0, 0))
    with pytest.raises(GeometryMismatch):
        PressureImage(values=np.zeros((2, 2)), geom=GEOM)


def test_geometry_json_round_trip():
    g = ImageGeometry.from_json(GEOM.to_json())
    assert g == GEOM
