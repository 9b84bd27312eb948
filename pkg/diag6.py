import sys
import numpy as np
import pointseg as ps

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 12.0
n_runs = int(sys.argv[2]) if len(sys.argv) > 2 else 10

deltas = []
for seed in range(1, n_runs + 1):
    rng = np.random.default_rng(seed + 5000)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
    )
    orphans = [p.instance_id for p in sc.points if corr.data[p.y, p.x] != p.class_id]
    cfg = ps.MdmConfig(seed=seed, offset_scale=scale)
    res = ps.run_mdm(sc, corr, cfg)
    ious = [st.metrics.overall_iou for st in res.stages]
    deltas.append(ious[-1] - ious[0])
    per_inst = [
        {k: round(v, 2) for k, v in st.metrics.ious.items()} for st in res.stages
    ]
    print(f"seed {seed} n={n_inst} orphans={orphans} stages={[round(i,1) for i in ious]} "
          f"delta {deltas[-1]:+.1f}")
    if orphans:
        for k in orphans:
            print(f"    inst {k} iou по stages: {[p[k] for p in per_inst]}")
print(f"scale {scale}: mean delta {np.mean(deltas):+.2f} nondecr {sum(d>=-0.0 for d in deltas)}/{n_runs}")
