import sys
import numpy as np
import pointseg as ps

base = int(sys.argv[1])
scale = float(sys.argv[2]) if len(sys.argv) > 2 else 18.0
d0 = []
for run in range(20):
    seed = base + run
    rng = np.random.default_rng(seed)
    n_inst = int(rng.integers(2, 7))
    try:
        sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    except ps.SceneError:
        print(f"base {base}: seed {seed} placement failed")
        continue
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 1)
    )
    res = ps.run_mdm(sc, corr, ps.MdmConfig(seed=seed, offset_scale=scale))
    ious = [st.metrics.overall_iou for st in res.stages]
    d0.append(ious[-1] - ious[0])
d0 = np.array(d0)
print(f"base {base} scale {scale}: mean {d0.mean():+.2f} nondecr {(d0 >= 0).sum()}/{len(d0)} "
      f"worst {d0.min():+.2f}")
