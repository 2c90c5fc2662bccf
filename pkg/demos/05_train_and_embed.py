"""
Training an embedder and assembling scenario-aware features
===========================================================

End-to-end on a deliberately tiny corpus: train for a handful of steps,
reload the checkpoint, embed clips, collapse window embeddings into one
scenario vector per utterance, and splice that vector onto frame-level
MFCCs.
"""

from pathlib import Path

import numpy as np

from scenefeat import (DspConfig, ModelConfig, SamplerConfig, TrainConfig,
                       assemble_features, default_scenarios, embed_utterance,
                       generate_corpus, load_checkpoint, load_clip_features,
                       mfcc, scenario_vector, train)
from scenefeat.dsp import log_mel
from scenefeat.training import FINAL_CHECKPOINT_NAME
from scenefeat.wavio import load_waveform

OUT = Path(__file__).resolve().parent / "out" / "05_train"
SEED = 7

manifest = generate_corpus(default_scenarios(2), utts_per_scenario=3,
                           out_dir=OUT / "corpus", duration_s=4.0, seed=SEED)

dsp = DspConfig()
model, curve = train(
    manifest, dsp,
    SamplerConfig(mode="clip", rng_seed=SEED),
    ModelConfig(hidden_dims=(64,), embed_dim=16),
    TrainConfig(steps=60, clips_per_batch=4, windows_per_clip=3, seed=SEED),
    OUT / "run",
)

first = np.mean([loss for _, loss, _ in curve[:10]])
last = np.mean([loss for _, loss, _ in curve[-10:]])
print(f"loss: first 10 steps {first:.4f} -> last 10 steps {last:.4f}")
print(f"active fraction at the end: {curve[-1][2]:.2f}")

# Checkpoints carry the weights plus the input normalization stats, so a
# reloaded model embeds identically with no extra state to plumb around.
reloaded = load_checkpoint(OUT / "run" / FINAL_CHECKPOINT_NAME)
clips = load_clip_features(manifest, dsp)
e1 = embed_utterance(model, clips[0].windows)
e2 = embed_utterance(reloaded, clips[0].windows)
print("reloaded checkpoint embeds identically:", np.array_equal(e1, e2))
print(f"embeddings: {e1.shape}, norms all 1: "
      f"{np.allclose(np.linalg.norm(e1, axis=1), 1.0)}")

# One vector per utterance: the mean of its unit-norm window embeddings.
vec = scenario_vector(e1, utt_id=clips[0].utt_id)
print(f"scenario vector for {vec.utt_id}: dim {vec.values.shape[0]}, "
      f"norm {np.linalg.norm(vec.values):.3f} (<= 1 by convexity)")

# Splice the utterance-level vector onto per-frame MFCCs. An optional aux
# block (anything the caller computes per utterance) sits in between.
wave = load_waveform(manifest.wav_path(manifest.entries[0]))
base = mfcc(log_mel(wave, dsp.frame_len_s, dsp.frame_hop_s, dsp.mel))
aux = np.array([wave.samples.std(), np.abs(wave.samples).max()])
out = assemble_features(base, aux, vec)
print(f"assembled: {out.frames.shape} "
      f"({out.num_base_dims} base + {out.num_scenario_dims} scenario dims)")

# The scenario block is constant down the frame axis by construction.
tail = out.frames[:, out.num_base_dims:]
print("scenario block constant across frames:", bool(np.ptp(tail, axis=0).max() == 0.0))
