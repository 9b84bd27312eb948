import sys
import time
import numpy as np
import pointseg as ps

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 8.0
n_runs = int(sys.argv[2]) if len(sys.argv) > 2 else 6

t0 = time.time()
deltas, firsts, finals = [], [], []
for seed in range(1, n_runs + 1):
    rng = np.random.default_rng(seed + 5000)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
    )
    cfg = ps.MdmConfig(seed=seed, offset_scale=scale)
    res = ps.run_mdm(sc, corr, cfg)
    ious = [st.metrics.overall_iou for st in res.stages]
    deltas.append(ious[-1] - ious[0])
    firsts.append(ious[0])
    finals.append(ious[-1])
    print(f"seed {seed}: n_inst {n_inst} stages {[round(i, 1) for i in ious]}  delta {ious[-1] - ious[0]:+.2f}")
print(f"scale {scale}: mean first {np.mean(firsts):.2f} mean final {np.mean(finals):.2f} "
      f"mean delta {np.mean(deltas):+.2f} nondecreasing {sum(d >= 0 for d in deltas)}/{n_runs} "
      f"({time.time() - t0:.1f}s)")
