import numpy as np
import pointseg as ps

gaps = []
for seed in range(1, 21):
    rng = np.random.default_rng(seed + 5000)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
    )
    gt_cls = sc.points.class_of()
    cfgG = ps.GroupingConfig()
    # stage-0 targets (with fallback completion) as the faithful reference
    cfgM = ps.MdmConfig(seed=seed)
    tgts = ps.build_stage_targets(corr, sc.points, cfgM, affinity_seed=None)
    rows = {}
    for name, off in [
        ("zero", ps.OffsetField(np.zeros((64, 64, 2)), np.ones((64, 64), bool))),
        ("tgt", ps.compute_offset_field(tgts.initial, sc.points)),
        ("gt-oracle", ps.compute_offset_field(sc.gt_instances, sc.points)),
    ]:
        g = ps.group_instances(off, corr, sc.points, cfgG)
        fin, cls = ps.finalize_pseudo_labels(g, corr, sc.points)
        m = ps.greedy_match(fin, sc.gt_instances, pred_classes=cls, gt_classes=gt_cls, class_aware=True)
        rows[name] = m.overall_iou
    gaps.append((rows["tgt"] - rows["zero"], rows["gt-oracle"] - rows["zero"]))
    print(f"seed {seed:2d} n={n_inst}: zero {rows['zero']:5.1f}  tgt-faithful {rows['tgt']:5.1f} "
          f"gt-oracle {rows['gt-oracle']:5.1f}  gap {gaps[-1][0]:+5.1f} / {gaps[-1][1]:+5.1f}")
arr = np.array(gaps)
print(f"mean tgt-vs-zero gap {arr[:,0].mean():+.2f}   mean gtoracle-vs-zero gap {arr[:,1].mean():+.2f}")
