"""Deterministic synthetic scenes and a corruption model for semantic inputs.

A scene is a small raster world: ground-truth instances, their class map, one
annotated interior point per instance, and per-pixel predictor features. The
corruption model stands in for an imperfect off-the-shelf semantic map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SceneError
from .grids import LabelGrid, Point, PointAnnotationSet

__all__ = [
    "Scene",
    "CorruptionConfig",
    "generate_scene",
    "corrupt_semantic",
    "pick_points",
    "features_from_semantic",
]

FEATURE_EXTRA_CHANNELS = 3  # normalized y, normalized x, intensity

_PLACEMENT_TRIES = 60
_SCENE_RESTARTS = 16
_MIN_NEW_PIXELS = 9
_MAX_OCCLUDED_FRACTION = 0.35


@dataclass(frozen=True, eq=False)
class Scene:
    """Ground truth plus predictor inputs for one synthetic image."""

    gt_instances: LabelGrid
    gt_semantic: LabelGrid
    points: PointAnnotationSet
    features: np.ndarray  # (H, W, C+1+3) float64

    @property
    def height(self) -> int:
        return self.gt_instances.height

    @property
    def width(self) -> int:
        return self.gt_instances.width

    @property
    def n_classes(self) -> int:
        return self.features.shape[2] - FEATURE_EXTRA_CHANNELS - 1

    def intensity(self) -> np.ndarray:
        return self.features[:, :, -1]


@dataclass(frozen=True)
class CorruptionConfig:
    """Morphological and stochastic damage applied to a clean semantic map."""

    dilation_px: int = 0
    erosion_px: int = 0
    merge_adjacent: bool = False
    flip_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.dilation_px < 0 or self.erosion_px < 0:
            raise SceneError("dilation/erosion must be >= 0")
        if not (0.0 <= self.flip_rate < 1.0):
            raise SceneError(f"flip rate must be in [0, 1), got {self.flip_rate}")


def _shift_or(mask: np.ndarray) -> np.ndarray:
    """One 8-neighborhood dilation step."""
    out = mask.copy()
    h, w = mask.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            ys_src = slice(max(-dy, 0), h + min(-dy, 0))
            xs_src = slice(max(-dx, 0), w + min(-dx, 0))
            out[ys, xs] |= mask[ys_src, xs_src]
    return out


def _dilate(mask: np.ndarray, n: int) -> np.ndarray:
    for _ in range(n):
        mask = _shift_or(mask)
    return mask


def _erode(mask: np.ndarray, n: int) -> np.ndarray:
    for _ in range(n):
        mask = ~_shift_or(~mask)
    return mask


def _rasterize(kind: str, y0: int, x0: int, sy: int, sx: int, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    if kind == "rect":
        mask[y0 : y0 + sy, x0 : x0 + sx] = True
    else:
        cy, cx = y0 + (sy - 1) / 2.0, x0 + (sx - 1) / 2.0
        ry, rx = sy / 2.0, sx / 2.0
        yy, xx = np.mgrid[0:h, 0:w]
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return mask


def generate_scene(
    seed: int,
    h: int = 64,
    w: int = 64,
    n_instances: int = 4,
    n_classes: int = 3,
    shape_kind: str = "mixed",
) -> Scene:
    """Place shapes deterministically; later-drawn instances occlude earlier ones.

    Classes are assigned round-robin so the pigeonhole guarantees same-class
    pairs whenever n_instances > n_classes. Features are the one-hot ground
    truth semantic map, normalized (y, x), and a per-instance jittered
    intensity channel.
    """
    if n_instances < 1 or n_classes < 1:
        raise SceneError("need at least one instance and one class")
    if shape_kind not in ("rect", "ellipse", "mixed"):
        raise SceneError(f"unknown shape kind {shape_kind!r}")
    last_error = None
    for restart in range(_SCENE_RESTARTS):
        # Restarts draw a fresh deterministic stream; restart 0 is the plain
        # per-seed stream so existing scenes stay reproducible.
        rng = (
            np.random.default_rng(seed)
            if restart == 0
            else np.random.default_rng(np.random.SeedSequence([seed, restart]))
        )
        try:
            return _generate_scene_once(rng, seed, h, w, n_instances, n_classes, shape_kind)
        except SceneError as err:
            last_error = err
    raise SceneError(f"placement failed after {_SCENE_RESTARTS} restarts: {last_error}")


def _generate_scene_once(
    rng: np.random.Generator,
    seed: int,
    h: int,
    w: int,
    n_instances: int,
    n_classes: int,
    shape_kind: str,
) -> Scene:
    # Classes come in pairs (1,1,2,2,...) so same-class neighbors, the hard
    # case for point-based separation, appear even in two-instance scenes.
    class_ids = np.array([1 + (i // 2) % n_classes for i in range(n_instances)])
    rng.shuffle(class_ids)

    lo = max(4, min(16, min(h, w) // 4))
    hi = max(lo + 1, min(h, w) * 13 // 32)
    mid = (lo + hi) // 2
    # Alternate small and large footprints: size contrast between neighbors
    # is what makes naive midline splits fail.
    size_band = [(lo, mid) if i % 2 else (mid, hi) for i in range(n_instances)]
    rng.shuffle(size_band)
    instances = np.zeros((h, w), dtype=np.int32)
    boxes: list[tuple[int, int, int, int]] = []  # (y0, x0, sy, sx) per instance
    for inst in range(1, n_instances + 1):
        b_lo, b_hi = size_band[inst - 1]
        placed = False
        for attempt in range(_PLACEMENT_TRIES):
            sy = int(rng.integers(b_lo, b_hi + 1))
            sx = int(rng.integers(b_lo, b_hi + 1))
            if sy >= h or sx >= w:
                continue
            if boxes and attempt < _PLACEMENT_TRIES // 2:
                # Crowd instances together: neighboring objects are the hard
                # case point supervision must untangle.
                by, bx, bsy, bsx = boxes[int(rng.integers(len(boxes)))]
                gap = int(rng.integers(1, 4))
                side = int(rng.integers(4))
                if side == 0:
                    y0, x0 = by - gap - sy, bx + int(rng.integers(-sx // 2, bsx - sx // 2 + 1))
                elif side == 1:
                    y0, x0 = by + bsy + gap, bx + int(rng.integers(-sx // 2, bsx - sx // 2 + 1))
                elif side == 2:
                    y0, x0 = by + int(rng.integers(-sy // 2, bsy - sy // 2 + 1)), bx - gap - sx
                else:
                    y0, x0 = by + int(rng.integers(-sy // 2, bsy - sy // 2 + 1)), bx + bsx + gap
                if not (0 <= y0 <= h - sy and 0 <= x0 <= w - sx):
                    continue
            else:
                y0 = int(rng.integers(0, h - sy + 1))
                x0 = int(rng.integers(0, w - sx + 1))
            kind = shape_kind if shape_kind != "mixed" else ("rect", "ellipse")[int(rng.integers(2))]
            mask = _rasterize(kind, y0, x0, sy, sx, h, w)
            if mask.sum() < _MIN_NEW_PIXELS:
                continue
            # Partial occlusion is allowed (it exercises same-class adjacency)
            # but no earlier instance may lose more than a cap of its pixels.
            before = np.bincount(instances.ravel(), minlength=inst + 1)
            candidate = instances.copy()
            candidate[mask] = inst
            after = np.bincount(candidate.ravel(), minlength=inst + 1)
            prev = slice(1, inst)
            if np.all(after[prev] >= np.ceil((1.0 - _MAX_OCCLUDED_FRACTION) * before[prev])):
                instances = candidate
                boxes.append((y0, x0, sy, sx))
                placed = True
                break
        if not placed:
            raise SceneError(f"placement failed for instance {inst} (seed {seed})")

    semantic = np.zeros_like(instances)
    fg = instances > 0
    semantic[fg] = class_ids[instances[fg] - 1]

    # Distinct jittered intensity levels so instances are tellable apart.
    order = rng.permutation(n_instances)
    span = 0.6 / max(1, n_instances - 1) if n_instances > 1 else 0.0
    levels = 0.35 + span * order + rng.uniform(-0.04, 0.04, size=n_instances)
    levels = np.clip(levels, 0.05, 1.0)
    intensity = np.zeros((h, w), dtype=np.float64)
    intensity[fg] = levels[instances[fg] - 1]

    gt_instances = LabelGrid(instances)
    gt_semantic = LabelGrid(semantic)
    points = pick_points(gt_instances, "random_interior", seed, semantic=gt_semantic)
    features = _assemble_features(gt_semantic, n_classes, h, w, intensity)
    return Scene(gt_instances, gt_semantic, points, features)


def _assemble_features(
    semantic: LabelGrid, n_classes: int, h: int, w: int, intensity: np.ndarray
) -> np.ndarray:
    one_hot = np.zeros((h, w, n_classes + 1), dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    one_hot[yy, xx, semantic.data] = 1.0
    norm_y = yy / max(h - 1, 1)
    norm_x = xx / max(w - 1, 1)
    feats = np.concatenate(
        [one_hot, norm_y[:, :, None], norm_x[:, :, None], intensity[:, :, None]], axis=2
    )
    feats.setflags(write=False)
    return feats


def features_from_semantic(scene: Scene, semantic: LabelGrid) -> np.ndarray:
    """Rebuild predictor features with the one-hot channels of `semantic`.

    The predictor must never see the ground-truth semantic map, so pipeline
    code swaps in the corrupted (or refreshed) map before training.
    """
    if semantic.shape != (scene.height, scene.width):
        raise SceneError("semantic shape mismatch")
    if int(semantic.data.max()) > scene.n_classes:
        raise SceneError("semantic class id exceeds scene class count")
    return _assemble_features(
        semantic, scene.n_classes, scene.height, scene.width, scene.intensity()
    )


def _chebyshev_distance(mask: np.ndarray, cap: int) -> np.ndarray:
    """Distance to the mask under 8-neighborhood steps, saturated at cap."""
    dist = np.full(mask.shape, cap, dtype=np.int32)
    dist[mask] = 0
    frontier = mask
    for k in range(1, cap):
        frontier = _shift_or(frontier)
        dist[frontier & (dist == cap)] = k
    return dist


def corrupt_semantic(scene: Scene, cfg: CorruptionConfig) -> LabelGrid:
    """Damage the ground-truth semantic map: per-class dilation/erosion,
    optional bridging of nearby same-class blobs, then random label flips.

    Where the grown masks of two classes collide, the pixel goes to the class
    whose original region is nearer, so dilation fronts meet mid-gap instead
    of annexing a neighbor's territory.
    """
    sem = scene.gt_semantic.data
    h, w = sem.shape
    n_classes = int(sem.max())
    reach = cfg.dilation_px + (4 if cfg.merge_adjacent else 0) + 2
    claims = np.zeros((n_classes + 1, h, w), dtype=bool)
    for c in range(1, n_classes + 1):
        mask = sem == c
        if not mask.any():
            continue
        mask = _dilate(mask, cfg.dilation_px)
        mask = _erode(mask, cfg.erosion_px)
        if cfg.merge_adjacent:
            mask = _erode(_dilate(mask, 2), 2)
        claims[c] = mask

    out = np.zeros_like(sem)
    contested = claims[1:].sum(axis=0) > 1
    for c in range(1, n_classes + 1):
        out[claims[c] & ~contested] = c
    if contested.any():
        dists = np.stack(
            [_chebyshev_distance(sem == c, reach) for c in range(1, n_classes + 1)]
        )
        dists = np.where(claims[1:], dists, reach + 1)
        winner = np.argmin(dists, axis=0) + 1  # ties go to the lower class id
        out[contested] = winner[contested]

    if cfg.flip_rate > 0.0:
        rng = np.random.default_rng(cfg.rng_seed)
        flip = rng.random((h, w)) < cfg.flip_rate
        bump = rng.integers(1, n_classes + 1, size=(h, w))
        out = np.where(flip, (out + bump) % (n_classes + 1), out)
    return LabelGrid(out.astype(np.int32))


def _interior_depth(mask: np.ndarray) -> np.ndarray:
    """Peeling depth per pixel: boundary layer is 1, deeper layers count up."""
    depth = np.zeros(mask.shape, dtype=np.float64)
    current = mask.copy()
    level = 0
    while current.any():
        level += 1
        core = _erode(current, 1)
        depth[current & ~core] = level
        current = core
    return depth


def pick_points(
    gt_instances: LabelGrid,
    mode: str,
    seed: int,
    semantic: LabelGrid | None = None,
) -> PointAnnotationSet:
    """One annotated point per instance, always a pixel of that instance.

    centroid: the region pixel nearest the true centroid (snaps inward when
    the centroid falls outside, e.g. L-shaped regions).
    random_interior: a seeded draw over the region's pixels, weighted toward
    the interior the way human clicks are; every region pixel stays possible.
    """
    if mode not in ("centroid", "random_interior"):
        raise SceneError(f"unknown point mode {mode!r}")
    ids = gt_instances.ids()
    if ids != list(range(1, len(ids) + 1)):
        raise SceneError(f"instance ids must be dense 1..K, got {ids}")
    rng = np.random.default_rng(seed)
    pts = []
    for inst in ids:
        mask = gt_instances.data == inst
        pix = np.argwhere(mask)
        if mode == "centroid":
            center = pix.mean(axis=0)
            d2 = ((pix - center) ** 2).sum(axis=1)
            y, x = pix[int(np.argmin(d2))]
        else:
            weights = _interior_depth(mask)[pix[:, 0], pix[:, 1]] ** 2
            y, x = pix[int(rng.choice(len(pix), p=weights / weights.sum()))]
        class_id = int(semantic.data[y, x]) if semantic is not None else 1
        pts.append(Point(int(y), int(x), class_id, inst))
    return PointAnnotationSet(tuple(pts))
