"""Region proposals from depth clusters.

Clusters too small relative to the whole cloud are discarded, the rest are
projected into the image as padded, clamped pixel boxes, and the proposals
covering the two top image corners (usually background) are removed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_interval
from .calibration import EPSILON_W, ProjectionMatrix
from .clustering import Cluster
from .exceptions import BehindCameraError, BoundsError
from .pointcloud_io import BBox2D, Image, PointCloud

__all__ = [
    "ProposalParams",
    "Proposal",
    "hull_box",
    "project_cluster_bbox",
    "denoise_small",
    "denoise_top_corners",
    "crop_subimage",
    "propose",
]


@dataclass(frozen=True)
class ProposalParams:
    """Denoising and box-shaping parameters.

    ``min_fraction`` is the smallest kept cluster size as a fraction of the
    cloud. ``corner_frac`` sizes the top-corner regions. ``margin_frac`` pads
    each side of a projected hull by that fraction of its width/height.
    """

    min_fraction: float = 0.02
    corner_frac: float = 0.15
    margin_frac: float = 0.02
    drop_behind_camera: bool = True

    def __post_init__(self):
        check_interval(self.min_fraction, "min_fraction", 0.0, 1.0, closed=(False, False))
        check_interval(self.corner_frac, "corner_frac", 0.0, 0.5, closed=(False, False))
        check_interval(self.margin_frac, "margin_frac", 0.0, np.inf, closed=(True, False))


@dataclass(frozen=True)
class Proposal:
    bbox: BBox2D
    cluster_id: int
    points_projected: int


def _round(x):
    # half-up rounding, independent of numpy's banker's rounding
    return int(np.floor(x + 0.5))


def hull_box(uv: np.ndarray, img_w: int, img_h: int, margin_frac: float = 0.0) -> BBox2D | None:
    """Pixel box around projected points, padded, rounded and clamped to the image.

    Box edges are the hull extremes rounded to the nearest pixel boundary, so a
    hull spanning [25.0, 75.0] yields x_min=25, x_max=75. Returns ``None`` when
    the clamped box has zero area.
    """
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    pad = margin_frac * (hi - lo)
    lo = lo - pad
    hi = hi + pad
    x0 = min(max(_round(lo[0]), 0), img_w)
    y0 = min(max(_round(lo[1]), 0), img_h)
    x1 = min(max(_round(hi[0]), 0), img_w)
    y1 = min(max(_round(hi[1]), 0), img_h)
    if x0 >= x1 or y0 >= y1:
        return None
    return BBox2D(x0, y0, x1, y1)


def project_cluster_bbox(
    P: ProjectionMatrix,
    cluster: Cluster,
    cloud: PointCloud,
    img_w: int,
    img_h: int,
    params: ProposalParams = ProposalParams(),
    cluster_id: int = 0,
) -> Proposal | None:
    """Project a cluster's points and box them; ``None`` means the cluster is dropped.

    Points behind the camera are skipped when ``params.drop_behind_camera``,
    otherwise they raise :class:`BehindCameraError`. A cluster is dropped when
    none of its points lands inside the image or its box has zero area.
    """
    uv, w = P.project(cloud.points[cluster.indices])
    front = w > EPSILON_W
    if not front.all():
        if not params.drop_behind_camera:
            k = int(cluster.indices[np.flatnonzero(~front)[0]])
            raise BehindCameraError(f"cluster {cluster_id}: point {k} is behind the camera")
        uv = uv[front]
    if len(uv) == 0:
        return None
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < img_w) & (uv[:, 1] >= 0) & (uv[:, 1] < img_h)
    n_inside = int(inside.sum())
    if n_inside == 0:
        return None
    box = hull_box(uv, img_w, img_h, params.margin_frac)
    if box is None:
        return None
    return Proposal(box, cluster_id, n_inside)


def denoise_small(clusters, total_points: int, min_fraction: float) -> list:
    """Keep clusters holding at least ``min_fraction`` of ``total_points`` (ties kept)."""
    if total_points < 1:
        raise ValueError("total_points must be >= 1")
    return [c for c in clusters if len(c) / total_points >= min_fraction]


def denoise_top_corners(proposals, img_w: int, img_h: int, corner_frac: float = 0.15) -> list[Proposal]:
    """Remove at most one proposal per top image corner.

    For the top-left and top-right corner pixels, (0, 0) and (img_w - 1, 0),
    the largest-area proposal whose box contains that pixel is removed (first
    in input order on equal area). A box containing a corner pixel necessarily
    overlaps that corner's region of side ``corner_frac`` of the image, so
    the region only bounds where candidates can lie. Proposals that merely
    overlap a corner region are kept.
    """
    check_interval(corner_frac, "corner_frac", 0.0, 0.5, closed=(False, False))
    proposals = list(proposals)
    removed = set()
    for cx, cy in ((0, 0), (img_w - 1, 0)):
        best = None
        for k, p in enumerate(proposals):
            if k in removed or not p.bbox.contains_pixel(cx, cy):
                continue
            if best is None or p.bbox.area > proposals[best].bbox.area:
                best = k
        if best is not None:
            removed.add(best)
    return [p for k, p in enumerate(proposals) if k not in removed]


def crop_subimage(image: Image, bbox: BBox2D) -> Image:
    """Sub-image under ``bbox``; pixel (i, j) equals source pixel (x_min + i, y_min + j)."""
    if not bbox.inside(image.width, image.height):
        raise BoundsError(f"box {bbox.as_list()} exceeds {image.width}x{image.height} image")
    return Image(image.pixels[bbox.y_min : bbox.y_max, bbox.x_min : bbox.x_max])


def propose(
    P: ProjectionMatrix,
    clusters,
    cloud: PointCloud,
    img_w: int,
    img_h: int,
    params: ProposalParams = ProposalParams(),
) -> list[Proposal]:
    """Run denoise_small -> project -> denoise_top_corners.

    ``cluster_id`` of each proposal indexes the ``clusters`` list as passed in.
    """
    if len(cloud) == 0:
        return []
    kept = set(id(c) for c in denoise_small(clusters, len(cloud), params.min_fraction))
    out = []
    for k, c in enumerate(clusters):
        if id(c) not in kept:
            continue
        p = project_cluster_bbox(P, c, cloud, img_w, img_h, params, cluster_id=k)
        if p is not None:
            out.append(p)
    return denoise_top_corners(out, img_w, img_h, params.corner_frac)
