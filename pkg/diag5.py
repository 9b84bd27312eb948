import sys
import numpy as np
import pointseg as ps
from pointseg.loop import predict
from pointseg.synth import features_from_semantic

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 16.0
for seed in [2, 5, 7, 8]:
    rng = np.random.default_rng(seed + 5000)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
    )
    cfg = ps.MdmConfig(seed=seed, offset_scale=scale)
    res = ps.run_mdm(sc, corr, cfg)
    feats = features_from_semantic(sc, corr)
    gt_cls = sc.points.class_of()
    print(f"--- seed {seed} n={n_inst}")
    for st in res.stages:
        outs = predict(st.params, feats)
        sem = st.semantic_in
        rows = []
        for name, off in [
            ("zero", ps.OffsetField(np.zeros((64, 64, 2)), np.ones((64, 64), bool))),
            ("pred", outs.offsets),
            ("tgt", ps.compute_offset_field(st.initial_instances, sc.points)),
        ]:
            g = ps.group_instances(off, sem, sc.points, cfg.grouping)
            fin, cls = ps.finalize_pseudo_labels(g, sem, sc.points)
            m = ps.greedy_match(fin, sc.gt_instances, pred_classes=cls, gt_classes=gt_cls, class_aware=True)
            # vote agreement with inst0 on inst0-foreground
            ref = st.initial_instances.data
            fg = ref > 0
            agree = float((g.data[fg] == ref[fg]).mean())
            rows.append(f"{name}: iou {m.overall_iou:5.1f} agree_inst0 {agree:.2f}")
        print(f"  stage {st.stage_idx} ({st.metrics.overall_iou:5.1f}): " + " | ".join(rows))
