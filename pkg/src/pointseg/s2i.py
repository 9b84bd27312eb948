"""Semantic-to-instance branch.

Turns a class-index map plus point annotations into initial instance labels
and offset targets, and groups predicted offsets back into instances by
center voting with a pseudo-box fallback.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import PipelineError
from .grids import LabelGrid, OffsetField, PointAnnotationSet, connected_components

__all__ = [
    "InstanceRegion",
    "GroupingConfig",
    "extract_regions",
    "attach_points",
    "assign_points",
    "class_grid_from_instances",
    "compute_offset_field",
    "group_instances",
    "finalize_pseudo_labels",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InstanceRegion:
    """A connected same-class component of the semantic map."""

    region_id: int
    class_id: int
    pixels: np.ndarray  # (n, 2) int32 (y, x), raster order
    owner_points: tuple[int, ...] = ()  # instance ids matched to this region


@dataclass(frozen=True)
class GroupingConfig:
    """Center-voting parameters.

    vote_radius_tau None means max(H, W) / 4, resolved at grouping time.
    """

    vote_radius_tau: float | None = None
    pseudo_box_side: int = 16
    require_foreground: bool = True

    def __post_init__(self):
        if self.pseudo_box_side < 1:
            raise PipelineError("pseudo box side must be >= 1")
        if self.vote_radius_tau is not None and self.vote_radius_tau <= 0:
            raise PipelineError("vote radius must be positive")


def extract_regions(semantic: LabelGrid, connectivity: int = 8) -> list[InstanceRegion]:
    """One region per connected component per class, in (class, raster) order."""
    regions: list[InstanceRegion] = []
    next_id = 1
    for class_id in semantic.ids():
        comps = connected_components(semantic.data == class_id, connectivity)
        for comp_id in range(1, int(comps.data.max()) + 1):
            pixels = np.argwhere(comps.data == comp_id).astype(np.int32)
            regions.append(InstanceRegion(next_id, class_id, pixels))
            next_id += 1
    return regions


def attach_points(
    regions: list[InstanceRegion],
    points: PointAnnotationSet,
    shape: tuple[int, int],
) -> list[InstanceRegion]:
    """Match points to the regions containing them.

    A point whose class disagrees with its region's class is treated as not
    contained (corrupted semantics make this common); it is logged and left
    to the pseudo-box fallback downstream.
    """
    h, w = shape
    points.validate_on(h, w)
    region_at = np.zeros((h, w), dtype=np.int32)
    for region in regions:
        region_at[region.pixels[:, 0], region.pixels[:, 1]] = region.region_id
    owners: dict[int, list[int]] = {r.region_id: [] for r in regions}
    by_id = {r.region_id: r for r in regions}
    for p in points:
        rid = int(region_at[p.y, p.x])
        if rid == 0:
            continue
        if by_id[rid].class_id != p.class_id:
            log.warning(
                "point %s ignored: class %d region %d has class %d",
                (p.y, p.x), p.class_id, rid, by_id[rid].class_id,
            )
            continue
        owners[rid].append(p.instance_id)
    return [replace(r, owner_points=tuple(sorted(owners[r.region_id]))) for r in regions]


def assign_points(
    regions: list[InstanceRegion],
    points: PointAnnotationSet,
    shape: tuple[int, int],
) -> LabelGrid:
    """Initial instance labels from regions and points.

    Regions with one point take its instance id wholesale. Regions holding
    several points are split pixel-wise by nearest point (squared Euclidean,
    ties to the lowest instance id). Pointless regions become background.
    """
    out = np.zeros(shape, dtype=np.int32)
    pos = {p.instance_id: (p.y, p.x) for p in points}
    for region in attach_points(regions, points, shape):
        if not region.owner_points:
            continue
        if len(region.owner_points) == 1:
            out[region.pixels[:, 0], region.pixels[:, 1]] = region.owner_points[0]
            continue
        anchors = np.array([pos[i] for i in region.owner_points], dtype=np.int64)
        pix = region.pixels.astype(np.int64)
        d2 = ((pix[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
        # argmin takes the first minimum; owner_points are sorted ascending.
        chosen = np.asarray(region.owner_points)[np.argmin(d2, axis=1)]
        out[region.pixels[:, 0], region.pixels[:, 1]] = chosen
    return LabelGrid(out)


def class_grid_from_instances(instances: LabelGrid, points: PointAnnotationSet) -> LabelGrid:
    """Class-index grid with each instance painted in its point's class."""
    class_of = points.class_of()
    lut = np.zeros(max([0, *class_of.keys()]) + 1, dtype=np.int32)
    for inst, cls in class_of.items():
        lut[inst] = cls
    orphan = set(instances.ids()) - set(class_of)
    if orphan:
        raise PipelineError(f"instance without annotation point: {sorted(orphan)}")
    return LabelGrid(lut[instances.data])


def compute_offset_field(instances: LabelGrid, points: PointAnnotationSet) -> OffsetField:
    """Pixel-to-point vectors: for a pixel m of instance k, vector = e_k - m.

    Background pixels are invalid with vector (0, 0).
    """
    pos = {p.instance_id: (p.y, p.x) for p in points}
    orphan = set(instances.ids()) - set(pos)
    if orphan:
        raise PipelineError(f"instance without annotation point: {sorted(orphan)}")
    h, w = instances.shape
    max_id = max([0, *pos.keys()])
    anchor_y = np.zeros(max_id + 1, dtype=np.float64)
    anchor_x = np.zeros(max_id + 1, dtype=np.float64)
    for inst, (py, px) in pos.items():
        anchor_y[inst], anchor_x[inst] = py, px
    yy, xx = np.mgrid[0:h, 0:w]
    valid = instances.data > 0
    vec = np.zeros((h, w, 2), dtype=np.float64)
    vec[:, :, 0] = np.where(valid, anchor_y[instances.data] - yy, 0.0)
    vec[:, :, 1] = np.where(valid, anchor_x[instances.data] - xx, 0.0)
    return OffsetField(vec, valid)


def group_instances(
    pred_offsets: OffsetField,
    semantic: LabelGrid,
    points: PointAnnotationSet,
    cfg: GroupingConfig,
) -> LabelGrid:
    """Center voting: each candidate pixel votes at p + offset(p) and joins the
    nearest annotation within tau. Points left empty get a pseudo-box, which
    only ever claims background pixels (earlier points win contested ones)."""
    h, w = semantic.shape
    if pred_offsets.shape != (h, w):
        raise PipelineError("offset field shape mismatch")
    points.validate_on(h, w)
    tau = cfg.vote_radius_tau if cfg.vote_radius_tau is not None else max(h, w) / 4.0
    anchors = points.positions()
    inst_ids = np.array([p.instance_id for p in points], dtype=np.int32)

    yy, xx = np.mgrid[0:h, 0:w]
    votes = np.stack([yy + pred_offsets.vectors[:, :, 0], xx + pred_offsets.vectors[:, :, 1]], axis=2)
    candidates = semantic.data > 0 if cfg.require_foreground else np.ones((h, w), dtype=bool)

    out = np.zeros((h, w), dtype=np.int32)
    flat_votes = votes[candidates]
    if len(flat_votes):
        d2 = ((flat_votes[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
        best = np.argmin(d2, axis=1)  # ties resolve to the lowest instance id
        best_d2 = d2[np.arange(len(flat_votes)), best]
        assigned = np.where(best_d2 <= tau * tau, inst_ids[best], 0)
        out[candidates] = assigned

    present = set(np.unique(out[out > 0]).tolist())
    half_lo = (cfg.pseudo_box_side - 1) // 2
    half_hi = cfg.pseudo_box_side // 2
    for p in points:
        if p.instance_id in present:
            continue
        y0, y1 = max(0, p.y - half_lo), min(h, p.y + half_hi + 1)
        x0, x1 = max(0, p.x - half_lo), min(w, p.x + half_hi + 1)
        box = out[y0:y1, x0:x1]
        box[box == 0] = p.instance_id
    return LabelGrid(out)


def finalize_pseudo_labels(
    grouped: LabelGrid,
    semantic: LabelGrid,
    points: PointAnnotationSet,
) -> tuple[LabelGrid, dict[int, int]]:
    """Mask grouped instances by the semantic map.

    A pixel survives only where the semantic class equals the class of its
    instance's annotation point; everything else (semantic background
    included) is cleared. Returns the cleaned grid and the instance-to-class
    map of the surviving instances.
    """
    class_of = points.class_of()
    stray = set(grouped.ids()) - set(class_of)
    if stray:
        raise PipelineError(f"grouped ids without annotation points: {sorted(stray)}")
    lut = np.zeros(max([0, *class_of.keys()]) + 1, dtype=np.int32)
    for inst, cls in class_of.items():
        lut[inst] = cls
    keep = (grouped.data > 0) & (semantic.data == lut[grouped.data])
    cleaned = np.where(keep, grouped.data, 0).astype(np.int32)
    grid = LabelGrid(cleaned)
    return grid, {i: class_of[i] for i in grid.ids()}
