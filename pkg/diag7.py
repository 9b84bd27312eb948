import numpy as np
import pointseg as ps

seed = 2
rng = np.random.default_rng(seed + 5000)
n_inst = int(rng.integers(2, 7))
sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
corr = ps.corrupt_semantic(
    sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
)
cfg = ps.MdmConfig(seed=seed, offset_scale=12.0)
res = ps.run_mdm(sc, corr, cfg)
print("points:", [(p.instance_id, p.class_id, p.y, p.x) for p in sc.points])
print("gt sizes:", {i: int((sc.gt_instances.data == i).sum()) for i in sc.gt_instances.ids()})
gt_fg = sc.gt_semantic.data > 0
for st in res.stages:
    print(f"stage {st.stage_idx}: ious {({k: round(v,2) for k,v in st.metrics.ious.items()})}")
    sin, sout = st.semantic_in.data, st.semantic_out.data
    for c in [1, 2, 3]:
        print(f"   class {c}: sem_in {np.sum(sin==c):4d} sem_out {np.sum(sout==c):4d} gt {np.sum(sc.gt_semantic.data==c):4d}")
    print("   inst0 sizes:", {i: int((st.initial_instances.data == i).sum()) for i in st.initial_instances.ids()})
    print("   pseudo sizes:", {i: int((st.pseudo_instances.data == i).sum()) for i in st.pseudo_instances.ids()})
    for p in sc.points:
        print(f"   point {p.instance_id}(c{p.class_id}): sem_in@pt={sin[p.y,p.x]} sem_out@pt={sout[p.y,p.x]}")
