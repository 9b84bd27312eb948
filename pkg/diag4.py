import sys
import numpy as np
import pointseg as ps
from pointseg.loop import predict
from pointseg.synth import features_from_semantic

scale = float(sys.argv[1])
seeds = [2, 5, 7]
for seed in seeds:
    rng = np.random.default_rng(seed + 5000)
    n_inst = int(rng.integers(2, 7))
    sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
    corr = ps.corrupt_semantic(
        sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
    )
    cfg = ps.MdmConfig(seed=seed, offset_scale=scale)
    res = ps.run_mdm(sc, corr, cfg)
    feats = features_from_semantic(sc, corr)
    line = f"seed {seed} (n={n_inst}) scale {scale}: "
    for st in res.stages:
        outs = predict(st.params, feats)
        tgt = ps.compute_offset_field(st.initial_instances, sc.points)
        v = tgt.valid
        resid = float(np.abs(outs.offsets.vectors[v] - tgt.vectors[v]).mean())
        tmag = float(np.abs(tgt.vectors[v]).mean())
        line += f"[s{st.stage_idx} iou={st.metrics.overall_iou:.1f} resid={resid:.2f}/{tmag:.2f}] "
    print(line)
