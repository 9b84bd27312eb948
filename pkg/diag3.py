import numpy as np
import pointseg as ps
from pointseg.loop import predict, affinity_logits
from pointseg.synth import features_from_semantic
from pointseg.losses import sigmoid
from pointseg.i2s import build_affinity_targets, I2SConfig

seed = int(__import__("sys").argv[1]) if len(__import__("sys").argv) > 1 else 5
rng = np.random.default_rng(seed + 5000)
n_inst = int(rng.integers(2, 7))
sc = ps.generate_scene(seed, 64, 64, n_inst, 3)
corr = ps.corrupt_semantic(
    sc, ps.CorruptionConfig(dilation_px=2, merge_adjacent=True, flip_rate=0.02, rng_seed=seed + 9000)
)
cfg = ps.MdmConfig(seed=seed, offset_scale=8.0)
res = ps.run_mdm(sc, corr, cfg)

gt_fg = sc.gt_semantic.data > 0
for st in res.stages:
    sin = st.semantic_in.data
    sout = st.semantic_out.data
    ring_in = (sin > 0) & ~gt_fg          # false foreground in input
    miss_in = (sin == 0) & gt_fg          # missed foreground in input
    ring_out = (sout > 0) & ~gt_fg
    miss_out = (sout == 0) & gt_fg
    print(f"stage {st.stage_idx}: iou={st.metrics.overall_iou:.1f} "
          f"sem_in[false_fg={ring_in.sum():4d} missed={miss_in.sum():4d}] -> "
          f"sem_out[false_fg={ring_out.sum():4d} missed={miss_out.sum():4d}] "
          f"px_iou {ps.dataset_pixel_iou(st.semantic_in, sc.gt_semantic):.3f}->"
          f"{ps.dataset_pixel_iou(st.semantic_out, sc.gt_semantic):.3f}")

# affinity contrast after final stage
feats = features_from_semantic(sc, corr)
outs = predict(res.stages[-1].params, feats)
samples = build_affinity_targets(res.stages[-1].initial_instances, I2SConfig(), seed=123)
logits = affinity_logits(outs.embeddings, samples)
s = sigmoid(logits)
pos = samples.targets > 0.5
print(f"affinity sigma: same-instance mean {s[pos].mean():.3f}  other mean {s[~pos].mean():.3f}")

# where do ring pixels' refresh weights point? sample ring pixels
from pointseg.losses import softmax_rows
h, w = 64, 64
emb = outs.embeddings.reshape(h * w, -1)
ringpix = np.argwhere((res.stages[-1].semantic_in.data > 0) & ~gt_fg)[:8]
for (y, x) in ringpix[:4]:
    i = y * w + x
    # neighbors within radius 8
    ys = slice(max(0, y - 8), min(h, y + 9)); xs = slice(max(0, x - 8), min(w, x + 9))
    yy, xx = np.mgrid[ys, xs]
    j = (yy * w + xx).ravel()
    a = sigmoid((emb[j] @ emb[i]) / np.sqrt(emb.shape[1])) ** 2
    jgt = gt_fg.ravel()[j]
    print(f"ring px ({y},{x}): weight mass to gt-fg nbrs {a[jgt].sum():.2f} vs bg nbrs {a[~jgt].sum():.2f} "
          f"(count {jgt.sum()} vs {(~jgt).sum()})")
