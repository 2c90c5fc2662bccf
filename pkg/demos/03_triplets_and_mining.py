"""
Triplet sampling modes and semi-hard mining
===========================================

Training needs (anchor, positive, negative) window triples. Two samplers
produce them from opposite assumptions:

  clip mode      positive = any window from the anchor's clip,
                 negative = any window from a different clip.
  temporal mode  positive = a window within tau seconds of the anchor,
                 negative = beyond tau in the same clip, or another clip.

On top of either, a miner can re-pick the negative inside a batch so the
loss spends its gradient on informative comparisons.
"""

from pathlib import Path

import numpy as np

from scenefeat import (DspConfig, SamplerConfig, default_scenarios,
                       generate_corpus, load_clip_features, mine_semi_hard,
                       sample_triplets, tau_windows, triplet_loss)

OUT = Path(__file__).resolve().parent / "out" / "03_sampling"
MARGIN = 0.5

manifest = generate_corpus(default_scenarios(3), utts_per_scenario=2,
                           out_dir=OUT, duration_s=6.0, seed=3)
clips = load_clip_features(manifest, DspConfig())
print("clips:", [(c.utt_id, len(c.windows)) for c in clips])

for mode in ("clip", "temporal"):
    cfg = SamplerConfig(mode=mode, tau_s=2.0, triplets_per_clip=200, rng_seed=0)
    triplets = sample_triplets([c.windows for c in clips], cfg)
    print(f"\n{mode} mode: {len(triplets)} triplets")
    t = triplets[0]
    print(f"  first: a={t.anchor} p={t.positive} n={t.negative}")

    # Check the mode's constraints directly on the drawn references.
    radius = tau_windows(cfg.tau_s, clips[0].windows.window_hop_s)
    for t in triplets:
        assert t.positive.clip_id == t.anchor.clip_id
        if mode == "clip":
            assert t.negative.clip_id != t.anchor.clip_id
        else:
            assert abs(t.positive.index - t.anchor.index) <= radius
            if t.negative.clip_id == t.anchor.clip_id:
                assert abs(t.negative.index - t.anchor.index) > radius
    print(f"  all constraints hold (tau radius = {radius} windows)")

    if mode == "temporal":
        same = sum(t.negative.clip_id == t.anchor.clip_id for t in triplets)
        print(f"  negatives from the anchor's own clip: {same}/{len(triplets)}")

# Mining: given batch embeddings and clip ids, pick for each anchor the
# hardest negative that is still farther than the positive (smallest such
# distance), falling back to the farthest one when none qualifies.
rng = np.random.default_rng(11)
emb = rng.normal(size=(12, 8))
emb /= np.linalg.norm(emb, axis=1, keepdims=True)
ids = ["u0"] * 4 + ["u1"] * 4 + ["u2"] * 4

mined = mine_semi_hard(emb, ids, margin=MARGIN)
print(f"\nmined {mined.shape[0]} triplets from a 12-window batch")

losses = [triplet_loss(emb[a], emb[p], emb[n], MARGIN) for a, p, n in mined]
print(f"  mean loss over mined triplets: {np.mean(losses):.4f}")
print(f"  active (loss > 0): {int(np.sum(np.array(losses) > 0))}/{len(losses)}")

# The hinge is zero exactly when the negative is at least margin farther
# (in squared distance) than the positive.
a, p, n = emb[mined[0]]
gap = np.sum((a - n) ** 2) - np.sum((a - p) ** 2)
print(f"  first triplet gap d(a,n)-d(a,p) = {gap:.4f}, "
      f"loss = {triplet_loss(a, p, n, MARGIN):.4f}")
