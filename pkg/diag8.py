import sys
import numpy as np
import pointseg as ps

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 5
rng = np.random.default_rng(seed + 5000)
n_inst = int(rng.integers(2, 7))
sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
corr = ps.corrupt_semantic(
    sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
)
cfg = ps.MdmConfig(seed=seed, offset_scale=12.0)
res = ps.run_mdm(sc, corr, cfg)

orphan = [p for p in sc.points if corr.data[p.y, p.x] != p.class_id][0]
k, c = orphan.instance_id, orphan.class_id
print(f"orphan inst {k} class {c} at ({orphan.y},{orphan.x}), gt size {(sc.gt_instances.data==k).sum()}")

def window(grid, y, x, r=5):
    return grid[max(0, y - r): y + r + 1, max(0, x - r): x + r + 1]

print("gt_semantic around point:"); print(window(sc.gt_semantic.data, orphan.y, orphan.x))
print("corrupted around point:"); print(window(corr.data, orphan.y, orphan.x))
for st in res.stages:
    gt_mask = sc.gt_instances.data == k
    print(f"--- stage {st.stage_idx}: inst{k} iou {st.metrics.ious[k]:.2f}")
    print(f"  sem_in class-{c} px: {(st.semantic_in.data == c).sum()}, on gt_k: {(st.semantic_in.data[gt_mask] == c).sum()}")
    print(f"  inst0_{k} size: {(st.initial_instances.data == k).sum()}")
    print(f"  pseudo_{k} size: {(st.pseudo_instances.data == k).sum()}")
    print(f"  sem_out class-{c} px: {(st.semantic_out.data == c).sum()}, on gt_k: {(st.semantic_out.data[gt_mask] == c).sum()}")
    print("  sem_in around pt:"); print(window(st.semantic_in.data, orphan.y, orphan.x))
    print("  sem_out around pt:"); print(window(st.semantic_out.data, orphan.y, orphan.x))
