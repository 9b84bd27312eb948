import sys
import time
import numpy as np
import pointseg as ps

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 16.0
t0 = time.time()
d_stage0, d_init = [], []
for run in range(20):
    seed = 100 + run
    rng = np.random.default_rng(seed)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 1)
    )
    cfg = ps.MdmConfig(seed=seed, offset_scale=scale)
    res = ps.run_mdm(sc, corr, cfg)
    gt_cls = sc.points.class_of()
    init = res.stages[0].initial_instances
    m_init = ps.greedy_match(init, sc.gt_instances, pred_classes=sc.points.class_of(),
                             gt_classes=gt_cls, class_aware=True)
    ious = [st.metrics.overall_iou for st in res.stages]
    d_stage0.append(ious[-1] - ious[0])
    d_init.append(ious[-1] - m_init.overall_iou)
    print(f"run {run:2d} n={n_inst}: init {m_init.overall_iou:5.1f} stages {[round(i,1) for i in ious]} "
          f"d_stage0 {d_stage0[-1]:+.1f} d_init {d_init[-1]:+.1f}")
d0, di = np.array(d_stage0), np.array(d_init)
print(f"scale {scale}: mean d_stage0 {d0.mean():+.2f} (nondecr {(d0>=0).sum()}/20) | "
      f"mean d_init {di.mean():+.2f} (nondecr {(di>=0).sum()}/20) | {time.time()-t0:.0f}s")
