"""Metric battery and 2-D projections over a small trained run."""

from pathlib import Path

import numpy as np

from scenefeat import (DspConfig, ModelConfig, SamplerConfig, TrainConfig,
                       default_scenarios, embed_utterance, evaluate_corpus,
                       generate_corpus, load_clip_features, project_2d,
                       scenario_vector, train)

OUT = Path(__file__).resolve().parent / "out" / "06_eval"
SEED = 7

manifest = generate_corpus(default_scenarios(3), utts_per_scenario=4,
                           out_dir=OUT / "corpus", duration_s=4.0, seed=SEED)
model, _ = train(manifest, DspConfig(),
                 SamplerConfig(mode="clip", rng_seed=SEED),
                 ModelConfig(hidden_dims=(64,), embed_dim=16),
                 TrainConfig(steps=150, clips_per_batch=4, windows_per_clip=3,
                             seed=SEED),
                 OUT / "run")

# One call computes the whole battery and writes eval_report.json plus a
# PCA projection of the per-utterance scenario vectors.
report = evaluate_corpus(manifest, model, OUT / "eval", num_pairs=2000,
                         seed=SEED)
print(f"same/diff-clip window AUC : {report.auc:.4f}")
print(f"k-means scenario purity   : {report.purity:.4f}")
print(f"probe accuracy, MFCC only : {report.probe_accuracy_base:.4f}")
print(f"probe accuracy, augmented : {report.probe_accuracy_augmented:.4f}")
print(f"projection written to     : {report.projection_path}")

lines = Path(report.projection_path).read_text().splitlines()
print(f"projection rows: {len(lines) - 1} (+ header: {lines[0]})")

# project_2d also runs standalone on any embedding matrix. PCA is exact
# and deterministic; t-SNE is the usual iterative layout, seeded.
clips = load_clip_features(manifest, DspConfig())
vectors = np.stack([scenario_vector(embed_utterance(model, c.windows)).values
                    for c in clips])
labels = [c.label for c in clips]

coords = project_2d(vectors, method="pca")
print(f"\npca coords: {coords.shape}")

coords_t = project_2d(vectors, method="tsne", perplexity=3.0, seed=0)
print(f"tsne coords: {coords_t.shape}")

# Eyeball check without a plot: with a decent embedding, same-label
# utterances should sit closer together than cross-label ones in 2-D.
d = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
same = np.array([[la == lb for lb in labels] for la in labels])
off = ~np.eye(len(labels), dtype=bool)
print(f"mean 2-D distance same-label {d[same & off].mean():.3f} "
      f"vs cross-label {d[~same].mean():.3f}")
