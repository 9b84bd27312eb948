import sys
import numpy as np
import pointseg as ps
from pointseg.loop import (
    MdmConfig, TinyPredictorParams, _fit, build_stage_targets, expand_features, predict,
)
from pointseg.synth import features_from_semantic

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 12.0
checkpoints = [0, 250, 500, 1000, 1600, 2600, 4000, 8000]

for seed in [2, 4, 7, 8, 15, 20]:
    rng = np.random.default_rng(seed + 5000)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
    )
    cfg = MdmConfig(seed=seed, offset_scale=scale)
    feats = features_from_semantic(sc, corr)
    work = ps.Scene(sc.gt_instances, sc.gt_semantic, sc.points, feats)
    targets = build_stage_targets(corr, sc.points, cfg, affinity_seed=12345)
    params = TinyPredictorParams.initialize(
        seed=cfg.seed, feature_dim=feats.shape[2], n_classes=sc.n_classes, offset_scale=scale
    )
    xmat = expand_features(feats)
    gt_cls = sc.points.class_of()
    ious = []
    done = 0
    for ck in checkpoints:
        params, _ = _fit(params, xmat, (64, 64), targets, cfg, ck - done)
        done = ck
        outs = predict(params, feats)
        g = ps.group_instances(outs.offsets, corr, sc.points, cfg.grouping)
        fin, cls = ps.finalize_pseudo_labels(g, corr, sc.points)
        m = ps.greedy_match(fin, sc.gt_instances, pred_classes=cls, gt_classes=gt_cls, class_aware=True)
        ious.append(round(m.overall_iou, 1))
    print(f"seed {seed:2d} n={n_inst} scale {scale}: " +
          " ".join(f"{c}:{i}" for c, i in zip(checkpoints, ious)))
