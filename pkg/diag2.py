import numpy as np
import pointseg as ps

seed = 6
rng = np.random.default_rng(seed + 5000)
n_inst = int(rng.integers(2, 7))
sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
corr = ps.corrupt_semantic(
    sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
)
print("points:", list(sc.points))
print("gt sizes:", {i: int((sc.gt_instances.data == i).sum()) for i in sc.gt_instances.ids()})
for p in sc.points:
    print(f"  point inst {p.instance_id} class {p.class_id}: corrupted sem at point = {corr.data[p.y, p.x]}")

cfg = ps.MdmConfig(seed=seed, offset_scale=8.0)
res = ps.run_mdm(sc, corr, cfg)
for st in res.stages:
    print("stage", st.stage_idx, "ious", {k: round(v, 2) for k, v in st.metrics.ious.items()})
    sem = st.semantic_in
    for p in sc.points:
        print(f"   sem_in at point {p.instance_id} (class {p.class_id}) = {sem.data[p.y, p.x]}", end="")
    print()
    for c in range(0, 4):
        print(f"   sem_in class {c}: {(sem.data == c).sum()}", end="")
    print()
    for c in range(0, 4):
        print(f"   sem_out class {c}: {(st.semantic_out.data == c).sum()}", end="")
    print()
    print("   initial inst sizes:", {i: int((st.initial_instances.data == i).sum()) for i in st.initial_instances.ids()})
    print("   pseudo sizes:", {i: int((st.pseudo_instances.data == i).sum()) for i in st.pseudo_instances.ids()})
