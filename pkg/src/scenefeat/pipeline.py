"""Shared corpus-to-features loading used by training, eval, and the CLI."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .corpus import Manifest
from .dsp import DspConfig, MfccMatrix, WindowSequence, context_windows, log_mel, mfcc
from .wavio import load_waveform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClipFeatures:
    utt_id: str
    label: str
    windows: WindowSequence
    mfcc: MfccMatrix | None = None


def load_clip_features(manifest: Manifest, dsp_config: DspConfig | None = None,
                       with_mfcc: bool = False, threads: int = 1) -> list:
    """Decode every manifest entry into context windows (and optionally MFCCs).

    Clips too short for a single context window are skipped with a warning;
    a corpus where everything is skipped is an error.
    """
    if dsp_config is None:
        dsp_config = DspConfig()
    if len(manifest) == 0:
        raise ValueError("manifest has no entries")

    def build(entry):
        wave = load_waveform(manifest.wav_path(entry))
        logmel = log_mel(wave, dsp_config.frame_len_s, dsp_config.frame_hop_s,
                         dsp_config.mel)
        windows = context_windows(logmel, dsp_config.window_frames,
                                  dsp_config.window_hop_frames,
                                  clip_id=entry.utt_id)
        coeffs = mfcc(logmel) if with_mfcc else None
        return ClipFeatures(entry.utt_id, entry.scenario_label, windows, coeffs)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(build, manifest.entries))
    else:
        built = [build(entry) for entry in manifest.entries]

    kept = []
    for clip in built:
        if clip.windows.too_short:
            log.warning("skipping %s: too short for one context window",
                        clip.utt_id)
            continue
        kept.append(clip)
    if not kept:
        raise ValueError("every clip was too short for one context window")
    return kept
