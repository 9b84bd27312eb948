import numpy as np
import pointseg as ps
from pointseg.loop import predict
from pointseg.synth import features_from_semantic

sc = ps.generate_scene(1, 64, 64, 4, 3)
corr = ps.corrupt_semantic(sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=1001))
cfg = ps.MdmConfig(seed=1)
res = ps.run_mdm(sc, corr, cfg)

gt_cls = sc.points.class_of()
for st in res.stages:
    print("stage", st.stage_idx, "per-gt ious", {k: round(v, 3) for k, v in st.metrics.ious.items()})
    print("   sem_in px-iou vs gt:", round(ps.dataset_pixel_iou(st.semantic_in, sc.gt_semantic), 3),
          "sem_out px-iou vs gt:", round(ps.dataset_pixel_iou(st.semantic_out, sc.gt_semantic), 3))

feats = features_from_semantic(sc, corr)
outs = predict(res.stages[-1].params, feats)
tgt = ps.compute_offset_field(res.stages[-1].initial_instances, sc.points)
v = tgt.valid
print("pred |off| mean", round(float(np.abs(outs.offsets.vectors[v]).mean()), 3),
      "target |off| mean", round(float(np.abs(tgt.vectors[v]).mean()), 3),
      "resid", round(float(np.abs(outs.offsets.vectors[v] - tgt.vectors[v]).mean()), 3))

zero = ps.OffsetField(np.zeros((64, 64, 2)), np.ones((64, 64), bool))
for name, off in [("zero-offsets", zero), ("pred-offsets", outs.offsets)]:
    g = ps.group_instances(off, res.stages[-1].semantic_in, sc.points, cfg.grouping)
    fin, cls = ps.finalize_pseudo_labels(g, res.stages[-1].semantic_in, sc.points)
    m = ps.greedy_match(fin, sc.gt_instances, pred_classes=cls, gt_classes=gt_cls, class_aware=True)
    print(name, "overall_iou", round(m.overall_iou, 2), "ious", {k: round(x, 2) for k, x in m.ious.items()})

# upper bound: oracle offsets from gt on the final semantic_in
oracle = ps.compute_offset_field(sc.gt_instances, sc.points)
g = ps.group_instances(oracle, res.stages[-1].semantic_in, sc.points, cfg.grouping)
fin, cls = ps.finalize_pseudo_labels(g, res.stages[-1].semantic_in, sc.points)
m = ps.greedy_match(fin, sc.gt_instances, pred_classes=cls, gt_classes=gt_cls, class_aware=True)
print("gt-oracle-offsets on final sem_in: overall_iou", round(m.overall_iou, 2))

# and on gt semantic (absolute ceiling check)
g = ps.group_instances(oracle, sc.gt_semantic, sc.points, cfg.grouping)
fin, cls = ps.finalize_pseudo_labels(g, sc.gt_semantic, sc.points)
m = ps.greedy_match(fin, sc.gt_instances, pred_classes=cls, gt_classes=gt_cls, class_aware=True)
print("ceiling (oracle on gt sem):", round(m.overall_iou, 2))
print("gt sizes:", {i: int((sc.gt_instances.data == i).sum()) for i in sc.gt_instances.ids()})
print("points:", list(sc.points))
