"""Waveform to log-mel to MFCC to context windows, one stage at a time."""

from pathlib import Path

import numpy as np

from scenefeat import (DspConfig, context_windows, default_scenarios,
                       generate_corpus, load_waveform, log_mel, mfcc)

OUT = Path(__file__).resolve().parent / "out" / "02_dsp"

manifest = generate_corpus(default_scenarios(2), utts_per_scenario=1,
                           out_dir=OUT, duration_s=4.0, seed=7)
wave = load_waveform(manifest.wav_path(manifest.entries[0]))
print(f"input: {wave.samples.shape[0]} samples at {wave.sample_rate} Hz")

cfg = DspConfig()

# Stage 1: 25 ms frames on a 10 ms hop, Hann window, power spectrum,
# triangular mel filterbank, log with a floor. Rows are frames.
spec = log_mel(wave, cfg.frame_len_s, cfg.frame_hop_s, cfg.mel)
print(f"log-mel: {spec.num_frames} frames x {spec.num_bands} bands, "
      f"hop {spec.frame_hop_s * 1000:.0f} ms")
print(f"  dynamic range: {spec.frames.min():.1f} .. {spec.frames.max():.1f}")

# Stage 2: orthonormal DCT-II over the band axis. Coefficient 0 tracks
# overall log energy, higher coefficients encode spectral shape.
coeffs = mfcc(spec)
print(f"mfcc: {coeffs.frames.shape[0]} frames x {coeffs.frames.shape[1]} coefficients")
c0 = coeffs.frames[:, 0]
band_mean = spec.frames.mean(axis=1)
corr = np.corrcoef(c0, band_mean)[0, 1]
print(f"  corr(c0, mean log energy) = {corr:.4f}")

# Stage 3: stack frames into fixed-size context windows for the embedder.
# 96 frames at 10 ms hop is roughly one second of context per window.
windows = context_windows(spec, cfg.window_frames, cfg.window_hop_frames,
                          clip_id=manifest.entries[0].utt_id)
print(f"windows: {len(windows)} x {windows.windows.shape[1:]} "
      f"(hop {windows.window_hop_s:.2f} s)")

# Adjacent windows overlap by half, so their contents agree on the overlap.
if len(windows) >= 2:
    left = windows.windows[0][:, cfg.window_hop_frames:]
    right = windows.windows[1][:, :cfg.window_frames - cfg.window_hop_frames]
    print("half-overlap consistent:", np.array_equal(left, right))

# A clip shorter than one window is flagged rather than silently padded.
short = log_mel(type(wave)(wave.samples[: wave.sample_rate // 2],
                           wave.sample_rate),
                cfg.frame_len_s, cfg.frame_hop_s, cfg.mel)
flagged = context_windows(short, cfg.window_frames, cfg.window_hop_frames)
print("half-second clip too short:", flagged.too_short)
