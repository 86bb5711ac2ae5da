"""Feature Indexing Module: vertex -> pixel registration, per-vertex feature
gathering from image-aligned maps, and fusion with vertex locations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import IndexOutOfRange, NoFeaturesEnabled
from .projection import ImageGeometry, bin_xy


@dataclass(frozen=True)
class FimToggles:
    use_xyz: bool = True
    use_image: bool = True
    use_latent: bool = True
    use_global: bool = True  # pooled encoder features, fused in the per-vertex head

    def __post_init__(self):
        if not (self.use_xyz or self.use_image or self.use_latent or self.use_global):
            raise NoFeaturesEnabled("at least one feature source must be enabled")

    def to_json(self):
        return {"use_xyz": self.use_xyz, "use_image": self.use_image,
                "use_latent": self.use_latent, "use_global": self.use_global}

    @staticmethod
    def from_json(d):
        return FimToggles(**{k: bool(d[k]) for k in
                             ("use_xyz", "use_image", "use_latent", "use_global")})


@dataclass(frozen=True)
class VertexFeatureMatrix:
    features: object  # Tensor or ndarray, (N_v, D)
    layout: dict      # group name -> width, in (xyz, image, latent) order


def register(mesh, geom: ImageGeometry):
    """Nearest-pixel index per vertex, clamped into the frame."""
    rows, cols = bin_xy(mesh.vertices[:, :2], geom)
    rows = np.clip(rows, 0, geom.rows - 1)
    cols = np.clip(cols, 0, geom.cols - 1)
    return np.stack([rows, cols], axis=1)


def gather(feature_map, pix):
    """out[v, c] = feature_map[c, row_v, col_v]; VJP scatter-adds back.

    ``feature_map`` may be a Tensor (Ch, H, W) or plain array.
    """
    fm = ad.as_tensor(feature_map)
    ch, h, w = fm.value.shape
    rows, cols = pix[:, 0], pix[:, 1]
    if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
        raise IndexOutOfRange("pixel indices out of feature-map bounds")
    # advanced indexing gives the scatter-add adjoint for free
    return ad.transpose(fm[:, rows, cols], (1, 0))


def fuse(mesh, gathered_image=None, gathered_latent=None,
         toggles: FimToggles = FimToggles(), vertices=None,
         template=None) -> VertexFeatureMatrix:
    """Concatenate enabled per-vertex feature groups in (xyz, image, latent)
    order.  ``vertices`` may be a Tensor to keep the coordinate group
    differentiable; only the pixel binning in :func:`register` is hard.
    ``template`` optionally appends the rest-pose coordinates to the xyz
    group as a pose-invariant vertex identity."""
    groups = []
    layout = {}
    if toggles.use_xyz:
        xyz = ad.as_tensor(vertices if vertices is not None
                           else np.asarray(mesh.vertices, dtype=np.float64))
        groups.append(xyz)
        layout["vertex_xyz"] = 3
        if template is not None:
            groups.append(ad.constant(np.asarray(template, dtype=np.float64)))
            layout["template_xyz"] = 3
    if toggles.use_image:
        if gathered_image is None:
            raise NoFeaturesEnabled("use_image set but no gathered image features given")
        g = ad.as_tensor(gathered_image)
        groups.append(g)
        layout["image_feats"] = g.value.shape[1]
    if toggles.use_latent:
        if gathered_latent is None:
            raise NoFeaturesEnabled("use_latent set but no gathered latent features given")
        g = ad.as_tensor(gathered_latent)
        groups.append(g)
        layout["latent_feats"] = g.value.shape[1]
    if not groups:
        # global-only configuration: the pooled features are broadcast in the
        # per-vertex head, so the per-vertex matrix is legitimately empty
        n_v = np.asarray(mesh.vertices).shape[0]
        return VertexFeatureMatrix(features=ad.constant(np.zeros((n_v, 0))), layout=layout)
    return VertexFeatureMatrix(features=ad.concat(groups, axis=1), layout=layout)
