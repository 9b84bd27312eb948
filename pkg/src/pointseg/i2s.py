"""Instance-to-semantic branch.

Builds binary pixel-pair affinity targets from an instance map and refreshes
a class score map through a row-normalized Hadamard-powered affinity
operator. The dense H*W x H*W matrix is a small-grid oracle; production code
evaluates affinity only at sampled pairs or within a neighborhood radius.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import PipelineError
from .grids import ClassScoreMap, LabelGrid

__all__ = [
    "I2SConfig",
    "AffinitySampleSet",
    "build_affinity_targets",
    "dense_affinity_from_instances",
    "refresh_semantic",
]

DENSE_GUARD_PIXELS = 4096
SYMMETRY_TOL = 1e-6

AffinityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class I2SConfig:
    beta: float = 2.0
    pair_radius: int = 8
    max_pairs: int = 4096
    balance: bool = True

    def __post_init__(self):
        if self.beta < 1.0:
            raise PipelineError(f"beta must be >= 1, got {self.beta}")
        if self.pair_radius < 1:
            raise PipelineError("pair radius must be >= 1")
        if self.max_pairs < 2:
            raise PipelineError("max_pairs must be >= 2")


@dataclass(frozen=True, eq=False)
class AffinitySampleSet:
    """Sampled pixel pairs with binary same-instance targets.

    a and b are (n, 2) int arrays of (y, x); targets are 1.0 for same-instance
    pairs and 0.0 otherwise; pred_logits holds the predictor's pairwise logits
    (zeros until filled in).
    """

    a: np.ndarray
    b: np.ndarray
    targets: np.ndarray
    pred_logits: np.ndarray
    radius: int
    seed: int

    def __post_init__(self):
        for name in ("a", "b", "targets", "pred_logits"):
            arr = np.asarray(getattr(self, name))
            object.__setattr__(self, name, arr)
        if len(self.a) != len(self.b) or len(self.a) != len(self.targets):
            raise PipelineError("pair arrays must have equal length")
        if len(self.pred_logits) != len(self.targets):
            raise PipelineError("logits length mismatch")

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.targets > 0.5))

    @property
    def n_neg(self) -> int:
        return len(self.targets) - self.n_pos

    def with_logits(self, logits: np.ndarray) -> "AffinitySampleSet":
        return replace(self, pred_logits=np.asarray(logits, dtype=np.float64))


def _half_plane_offsets(radius: int) -> list[tuple[int, int]]:
    """Each unordered pair within Chebyshev radius exactly once."""
    offsets = []
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            offsets.append((dy, dx))
    return offsets


def build_affinity_targets(
    instances: LabelGrid, cfg: I2SConfig, seed: int = 0
) -> AffinitySampleSet:
    """Sample up to max_pairs pixel pairs within pair_radius.

    Pairs of two background pixels are excluded. With balance on, positives
    and negatives differ by at most one unless one side runs out. Sampling is
    deterministic per seed.
    """
    lab = instances.data
    h, w = lab.shape
    all_a, all_b, all_t = [], [], []
    for dy, dx in _half_plane_offsets(cfg.pair_radius):
        ys = slice(0, h - dy)
        xs = slice(max(0, -dx), w - max(0, dx))
        la = lab[ys, xs]
        lb = lab[dy : h, slice(max(0, dx), w + min(0, dx))]
        keep = (la > 0) | (lb > 0)
        if not keep.any():
            continue
        ayx = np.argwhere(keep)
        ayx[:, 1] += max(0, -dx)
        byx = ayx + np.array([dy, dx])
        all_a.append(ayx)
        all_b.append(byx)
        all_t.append(((la == lb) & (la > 0))[keep])
    if not all_a:
        raise PipelineError("no affinity pairs")
    a = np.concatenate(all_a).astype(np.int32)
    b = np.concatenate(all_b).astype(np.int32)
    t = np.concatenate(all_t)

    rng = np.random.default_rng(seed)
    pos_idx = np.flatnonzero(t)
    neg_idx = np.flatnonzero(~t)
    if cfg.balance:
        n_pos = min(len(pos_idx), (cfg.max_pairs + 1) // 2)
        n_neg = min(len(neg_idx), cfg.max_pairs - n_pos)
        n_pos = min(len(pos_idx), cfg.max_pairs - n_neg)
        chosen = np.concatenate([
            rng.choice(pos_idx, n_pos, replace=False) if n_pos else np.empty(0, dtype=np.int64),
            rng.choice(neg_idx, n_neg, replace=False) if n_neg else np.empty(0, dtype=np.int64),
        ])
    else:
        take = min(cfg.max_pairs, len(t))
        chosen = rng.choice(len(t), take, replace=False)
    chosen.sort()
    return AffinitySampleSet(
        a=a[chosen],
        b=b[chosen],
        targets=t[chosen].astype(np.float64),
        pred_logits=np.zeros(len(chosen), dtype=np.float64),
        radius=cfg.pair_radius,
        seed=seed,
    )


def dense_affinity_from_instances(instances: LabelGrid) -> np.ndarray:
    """Full binary affinity matrix; test oracle, guarded to small grids."""
    h, w = instances.shape
    n = h * w
    if n > DENSE_GUARD_PIXELS:
        raise PipelineError(f"dense affinity guard: {n} pixels exceeds {DENSE_GUARD_PIXELS}")
    flat = instances.data.ravel()
    same = (flat[:, None] == flat[None, :]) & (flat[:, None] > 0)
    aff = same.astype(np.float64)
    np.fill_diagonal(aff, 1.0)
    return aff


def refresh_semantic(
    affinity: np.ndarray | AffinityFn,
    class_map: ClassScoreMap,
    cfg: I2SConfig,
) -> ClassScoreMap:
    """Refresh class scores through the affinity operator.

    Each output row is sum_j W_ij * C(j, .) with W the row-normalized
    Hadamard power affinity (diagonal included). `affinity` is either the
    dense H*W x H*W matrix (must be symmetric, unit diagonal) or a callable
    f(flat_i, flat_j) -> values in [0, 1], evaluated only within
    cfg.pair_radius; the callable path forces unit self-affinity.
    """
    h, w, ch = class_map.data.shape
    n = h * w
    flat_c = class_map.data.reshape(n, ch)
    if callable(affinity):
        acc = flat_c.copy()  # diagonal term with weight 1^beta = 1
        wsum = np.ones(n, dtype=np.float64)
        grid = np.arange(n, dtype=np.int64).reshape(h, w)
        r = cfg.pair_radius
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dy == 0 and dx == 0:
                    continue
                ys = slice(max(0, -dy), h - max(0, dy))
                xs = slice(max(0, -dx), w - max(0, dx))
                i_idx = grid[ys, xs].ravel()
                j_idx = grid[
                    slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx))
                ].ravel()
                vals = np.asarray(affinity(i_idx, j_idx), dtype=np.float64) ** cfg.beta
                acc[i_idx] += vals[:, None] * flat_c[j_idx]
                wsum[i_idx] += vals
        out = acc / wsum[:, None]
    else:
        aff = np.asarray(affinity, dtype=np.float64)
        if aff.shape != (n, n):
            raise PipelineError(f"dense affinity must be {n}x{n}, got {aff.shape}")
        if np.abs(aff - aff.T).max() > SYMMETRY_TOL:
            raise PipelineError("affinity not symmetric")
        powered = aff**cfg.beta
        sums = powered.sum(axis=1)
        degenerate = sums == 0.0
        sums[degenerate] = 1.0
        out = (powered @ flat_c) / sums[:, None]
        out[degenerate] = flat_c[degenerate]
    return ClassScoreMap(out.reshape(h, w, ch))
