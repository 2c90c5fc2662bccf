"""Synthetic multi-scenario speech corpus with manifest handling.

Every utterance is a speech-like carrier (a few random-walk-pitched
harmonics under slow amplitude modulation) mixed with one scenario's
noise at that scenario's SNR. Scenario kinds differ in spectral and
temporal texture so that downstream embeddings have something real to
discriminate. Generation is reproducible down to the sample: every
utterance draws from its own RNG substream keyed by (seed, utt_index).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from .dsp import Waveform
from .wavio import save_waveform

log = logging.getLogger(__name__)

NOISE_KINDS = (
    "colored_noise",
    "harmonic_hum",
    "bandpass_channel",
    "impulsive",
    "babble_like",
)

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_MAX_DURATION_S = 10.0
MIN_UTT_DURATION_S = 2.0
# One default context window is 0.975 s of audio; anything shorter is useless.
MIN_DURATION_FLOOR_S = 1.0
SNR_DB_RANGE = (-5.0, 30.0)
MANIFEST_NAME = "manifest.tsv"
_PEAK_TARGET = 0.95

# Carrier shape. Pitch ranges overlap across scenarios on purpose: pitch is
# a clip cue, never a scenario cue. The pause gating makes windows from one
# clip genuinely heterogeneous, the way real speech is.
_F0_RANGE_HZ = (150.0, 320.0)
_NUM_HARMONICS_RANGE = (3, 5)
_AM_RATE_RANGE_HZ = (2.0, 8.0)
_AM_DEPTH_RANGE = (0.3, 0.7)
_PITCH_DRIFT_STD = 0.12  # log-pitch random walk std after ~5 s
_VOICED_LEN_RANGE_S = (0.7, 1.8)
_PAUSE_LEN_RANGE_S = (0.6, 1.4)
_GATE_RAMP_S = 0.05
# Every noise kind rides on a shared pink bed; the overlay weight is the
# fraction of noise power carried by the kind-specific part. Keeping the
# bed dominant stops raw spectra from giving scenarios away for free.
_BED_EXPONENT_JITTER = 0.03
# Slow whole-mix gain drift (log-amplitude std and control-point spacing).
_WANDER_LOG_STD = 0.25
_WANDER_SPACING_S = 0.8
# Fixed output gain. Every clip gets the same scale, so absolute level
# carries no clip identity; _PEAK_TARGET only guards the int16 ceiling.
_MIX_GAIN = 0.05


@dataclass(frozen=True)
class ScenarioSpec:
    """One acoustic scenario: a noise kind, its SNR, and filter parameters."""

    label: str
    noise_kind: str
    snr_db: float = 8.0
    filter_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(
                f"unknown noise kind {self.noise_kind!r}, expected one of {NOISE_KINDS}"
            )
        lo, hi = SNR_DB_RANGE
        if not lo <= self.snr_db <= hi:
            raise ValueError(f"snr_db {self.snr_db} outside [{lo}, {hi}]")
        if not self.label:
            raise ValueError("scenario label must be non-empty")


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str  # relative to the manifest's directory unless absolute
    scenario_label: str
    duration_s: float


@dataclass(frozen=True)
class Manifest:
    entries: tuple
    root: Path

    def __len__(self) -> int:
        return len(self.entries)

    def wav_path(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def labels(self) -> list:
        return sorted({e.scenario_label for e in self.entries})


def default_scenarios(count: int = 5) -> list:
    """The five stock scenarios, optionally truncated to the first count."""
    stock = [
        ScenarioSpec("harmonic_hum", "harmonic_hum", snr_db=8.0,
                     filter_params={"fundamental_hz": 60.0, "num_harmonics": 8}),
        ScenarioSpec("colored_noise", "colored_noise", snr_db=8.0,
                     filter_params={"exponent": 1.0, "jitter": 0.05}),
        ScenarioSpec("bandpass_channel", "bandpass_channel", snr_db=8.0,
                     filter_params={"low_hz": 300.0, "high_hz": 2400.0}),
        ScenarioSpec("impulsive", "impulsive", snr_db=8.0,
                     filter_params={"rate_hz": 5.0, "decay_s": 0.003}),
        ScenarioSpec("babble_like", "babble_like", snr_db=8.0,
                     filter_params={"num_bands": 6}),
    ]
    if not 1 <= count <= len(stock):
        raise ValueError(f"count must be in [1, {len(stock)}], got {count}")
    return stock[:count]


def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x ** 2))
    if rms <= 0:
        raise ValueError("cannot normalize an all-zero signal")
    return x / rms


def _speech_segments(n: int, sr: int, rng: np.random.Generator) -> list:
    """Alternating (start, end, voiced) spans covering [0, n).

    Both run kinds last longer than one analysis window on purpose, so
    windows cut from one utterance range from fully voiced to noise-only.
    """
    spans = []
    pos = 0
    voiced = bool(rng.random() < 0.6)
    while pos < n:
        lo, hi = _VOICED_LEN_RANGE_S if voiced else _PAUSE_LEN_RANGE_S
        length = max(1, int(rng.uniform(lo, hi) * sr))
        spans.append((pos, min(n, pos + length), voiced))
        pos += length
        voiced = not voiced
    if not any(v for _, _, v in spans):
        start, end, _ = spans[0]
        spans[0] = (start, end, True)
    return spans


def _synth_carrier(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Speech-like carrier: phrases of 3-5 drifting harmonics between pauses.

    Every voiced run redraws its own pitch, tilt, and 2-8 Hz modulation,
    the way no two spoken phrases repeat. Nothing about the carrier is
    stable across an utterance, which keeps it from acting as a signature.
    """
    num_harmonics = int(rng.integers(_NUM_HARMONICS_RANGE[0],
                                     _NUM_HARMONICS_RANGE[1] + 1))
    step_std = _PITCH_DRIFT_STD / np.sqrt(5.0 * sr)
    x = np.zeros(n)
    gate = np.zeros(n)
    for start, end, voiced in _speech_segments(n, sr, rng):
        if not voiced:
            continue
        m = end - start
        f0 = rng.uniform(*_F0_RANGE_HZ)
        drift = np.clip(np.cumsum(rng.normal(0.0, step_std, m)), -0.3, 0.3)
        base_phase = 2.0 * np.pi * np.cumsum(f0 * np.exp(drift)) / sr

        rolloff = rng.uniform(0.5, 1.5)
        amps = np.arange(1, num_harmonics + 1) ** (-rolloff)
        amps *= rng.uniform(0.5, 1.0, num_harmonics)
        phases = rng.uniform(0.0, 2.0 * np.pi, num_harmonics)
        seg = np.zeros(m)
        for k in range(num_harmonics):
            seg += amps[k] * np.sin((k + 1) * base_phase + phases[k])

        am_rate = rng.uniform(*_AM_RATE_RANGE_HZ)
        am_depth = rng.uniform(*_AM_DEPTH_RANGE)
        am_phase = rng.uniform(0.0, 2.0 * np.pi)
        t = np.arange(m) / sr
        envelope = (1.0 - am_depth) + am_depth * 0.5 * (
            1.0 + np.sin(2.0 * np.pi * am_rate * t + am_phase)
        )
        x[start:end] = seg * envelope
        gate[start:end] = 1.0

    ramp_len = max(1, int(_GATE_RAMP_S * sr))
    ramp = np.hanning(2 * ramp_len + 1)
    ramp /= ramp.sum()
    gate = np.clip(sp_signal.fftconvolve(gate, ramp, mode="same"), 0.0, 1.0)
    return _unit_rms(x * gate)


def _power_law_fir(exponent: float, sr: int,
                   numtaps: int = 513) -> np.ndarray:
    """FIR whose amplitude response follows f^(-exponent/2) above 40 Hz."""
    freqs = np.linspace(0.0, sr / 2.0, 128)
    shaped = np.maximum(freqs, 40.0) ** (-exponent / 2.0)
    return sp_signal.firwin2(numtaps, freqs, shaped / shaped[0], fs=sr)


def _colored_noise(n, sr, rng, exponent=1.0, jitter=0.0):
    """Power-law noise; exponent 1.0 is pink (power ~ 1/f).

    A nonzero jitter perturbs the exponent uniformly by up to +/- that
    amount, giving each utterance its own slightly personal tilt. The
    shaping runs as an FIR over streaming white noise, so separate stretches
    of one realization stay statistically independent; shaping a single
    whole-signal FFT draw instead would freeze one ripple pattern across
    the entire clip.
    """
    if jitter > 0.0:
        exponent = exponent + rng.uniform(-jitter, jitter)
    taps = _power_law_fir(exponent, sr)
    white = rng.standard_normal(n + taps.size - 1)
    return _unit_rms(sp_signal.fftconvolve(white, taps, mode="valid"))


def _over_bed(overlay, n, sr, rng, overlay_weight):
    """Mix a kind overlay over the shared pink bed at the given power split."""
    if not 0.0 <= overlay_weight <= 1.0:
        raise ValueError(f"overlay_weight {overlay_weight} outside [0, 1]")
    bed = _colored_noise(n, sr, rng, exponent=1.0, jitter=_BED_EXPONENT_JITTER)
    mix = (np.sqrt(overlay_weight) * _unit_rms(overlay)
           + np.sqrt(1.0 - overlay_weight) * bed)
    return _unit_rms(mix)


def _harmonic_hum(n, sr, rng, fundamental_hz=60.0, num_harmonics=8,
                  overlay_weight=0.4):
    """Mains-style hum: a decaying harmonic stack over the pink bed.

    Harmonic amplitudes get a per-utterance wobble around the 1/h law;
    the line frequencies themselves stay put.
    """
    t = np.arange(n) / sr
    x = np.zeros(n)
    for h in range(1, num_harmonics + 1):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = (1.0 / h) * rng.uniform(0.85, 1.0)
        x += amp * np.sin(2.0 * np.pi * fundamental_hz * h * t + phase)
    return _over_bed(x, n, sr, rng, overlay_weight)


def _bandpass_channel(n, sr, rng, low_hz=300.0, high_hz=2400.0, order=4,
                      overlay_weight=0.35):
    """In-band noise shelf (jittered Butterworth edges) over the pink bed."""
    if not 0.0 < low_hz < high_hz < sr / 2.0:
        raise ValueError(f"bad band edges ({low_hz}, {high_hz}) at sr {sr}")
    low = max(10.0, low_hz * rng.uniform(0.97, 1.03))
    high = min(0.98 * sr / 2.0, high_hz * rng.uniform(0.97, 1.03))
    sos = sp_signal.butter(order, [low, high], btype="bandpass",
                           fs=sr, output="sos")
    shelf = sp_signal.sosfilt(sos, rng.standard_normal(n))
    return _over_bed(shelf, n, sr, rng, overlay_weight)


def _impulsive(n, sr, rng, rate_hz=5.0, decay_s=0.003, overlay_weight=0.2):
    """Sparse bright Poisson clicks over the pink bed.

    Each click is a short pre-emphasized noise burst, far brighter than the
    bed while it lasts.  At a few-percent duty cycle the clicks barely move
    the long-run average log spectrum, so the kind reads as spiky in time
    rather than as a spectral signature.  Rate, decay and click brightness
    are drawn once per utterance.
    """
    rate = rate_hz * rng.uniform(0.85, 1.15)
    decay = decay_s * rng.uniform(0.8, 1.25)
    pre = rng.uniform(0.7, 0.95)
    count = max(1, int(rng.poisson(rate * n / sr)))
    positions = rng.integers(0, n, count)
    amps = rng.uniform(0.6, 1.0, count) * rng.choice([-1.0, 1.0], count)
    train = np.zeros(n)
    np.add.at(train, positions, amps)

    kernel_len = max(8, int(round(3.0 * decay * sr)))
    kernel = sp_signal.lfilter([1.0, -pre], [1.0],
                               rng.standard_normal(kernel_len))
    kernel *= np.exp(-np.arange(kernel_len) / (decay * sr))
    kernel /= np.sqrt(np.sum(kernel ** 2))
    clicks = sp_signal.fftconvolve(train, kernel)[:n]
    return _over_bed(clicks, n, sr, rng, overlay_weight)


def _babble_like(n, sr, rng, num_bands=6, overlay_weight=0.35):
    """Modulated bands tiling the spectrum at pink-matched power.

    Octave-ish bands with per-band syllabic envelopes: the average spectrum
    mimics the pink bed, so this kind reads as chatter in the time course,
    not as a stationary spectral signature.
    """
    t = np.arange(n) / sr
    x = np.zeros(n)
    top = min(6000.0, 0.75 * sr / 2.0)
    anchors = np.geomspace(300.0, top, num_bands)
    for center_hz in anchors:
        center = center_hz * rng.uniform(0.97, 1.03)
        width = center / 2.0
        low = max(50.0, center - width / 2.0)
        high = min(0.98 * sr / 2.0, center + width / 2.0)
        sos = sp_signal.butter(2, [low, high], btype="bandpass", fs=sr,
                               output="sos")
        band = _unit_rms(sp_signal.sosfilt(sos, rng.standard_normal(n)))
        rate = rng.uniform(3.0, 6.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        envelope = 0.5 * (1.0 + np.sin(2.0 * np.pi * rate * t + phase))
        x += center ** -0.5 * band * envelope
    return _over_bed(x, n, sr, rng, overlay_weight)


_NOISE_FNS = {
    "colored_noise": _colored_noise,
    "harmonic_hum": _harmonic_hum,
    "bandpass_channel": _bandpass_channel,
    "impulsive": _impulsive,
    "babble_like": _babble_like,
}


def synthesize_components(spec: ScenarioSpec, duration_s: float,
                          sample_rate: int, rng: np.random.Generator):
    """Return (carrier, noise) pre-mix, noise already scaled to spec.snr_db."""
    n = int(round(duration_s * sample_rate))
    if n < 2:
        raise ValueError(f"duration {duration_s} s is too short to synthesize")
    carrier = _synth_carrier(n, sample_rate, rng)
    noise = _NOISE_FNS[spec.noise_kind](n, sample_rate, rng, **spec.filter_params)
    noise = noise * 10.0 ** (-spec.snr_db / 20.0)
    return carrier, noise


def _level_wander(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Slow gain drift, like a talker leaning toward and away from the mic.

    Piecewise-linear in log-amplitude with ~0.8 s control spacing. Applied
    to the full mix, so it moves the level without touching the SNR, and
    it keeps absolute loudness from acting as a per-clip signature.
    """
    num_ctrl = max(2, int(round(n / (_WANDER_SPACING_S * sr))) + 2)
    ctrl = rng.normal(0.0, _WANDER_LOG_STD, num_ctrl)
    ctrl -= ctrl.mean()
    positions = np.linspace(0.0, float(n - 1), num_ctrl)
    return np.exp(np.interp(np.arange(n, dtype=np.float64), positions, ctrl))


def synthesize_utterance(spec: ScenarioSpec, duration_s: float,
                         sample_rate: int, rng: np.random.Generator) -> Waveform:
    """Mix carrier and scenario noise at a fixed output gain."""
    carrier, noise = synthesize_components(spec, duration_s, sample_rate, rng)
    mix = (carrier + noise) * _level_wander(carrier.size, sample_rate, rng)
    mix = mix * _MIX_GAIN
    peak = np.max(np.abs(mix))
    if peak > _PEAK_TARGET:
        mix = mix * (_PEAK_TARGET / peak)
    return Waveform(samples=mix, sample_rate=sample_rate)


def _utt_rng(seed: int, utt_index: int) -> np.random.Generator:
    # A per-utterance substream: stable under reordering and threading.
    return np.random.default_rng([seed, utt_index])


def generate_corpus(
    specs,
    utts_per_scenario: int,
    out_dir,
    duration_s: float = DEFAULT_MAX_DURATION_S,
    seed: int = 0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    threads: int = 1,
) -> Manifest:
    """Generate WAVs plus a manifest under out_dir; returns the manifest.

    Durations are drawn per utterance, uniform in
    [min(2.0, duration_s), duration_s]. Everything is a pure function of
    (seed, utt_index), so two runs with the same arguments produce
    byte-identical files regardless of thread count.
    """
    specs = list(specs)
    if len(specs) < 1:
        raise ValueError("need at least one scenario spec")
    if len({s.label for s in specs}) != len(specs):
        raise ValueError("scenario labels must be unique")
    if utts_per_scenario < 1:
        raise ValueError(f"utts_per_scenario must be >= 1, got {utts_per_scenario}")
    if duration_s < MIN_DURATION_FLOOR_S:
        raise ValueError(
            f"duration_s {duration_s} is below {MIN_DURATION_FLOOR_S} s, "
            "shorter than one context window"
        )
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")

    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    min_dur = min(MIN_UTT_DURATION_S, duration_s)

    jobs = []
    utt_index = 0
    for spec in specs:
        for j in range(utts_per_scenario):
            jobs.append((utt_index, spec, f"{spec.label}_{j:04d}"))
            utt_index += 1

    def render(job):
        index, spec, utt_id = job
        rng = _utt_rng(seed, index)
        dur = rng.uniform(min_dur, duration_s)
        wave = synthesize_utterance(spec, dur, sample_rate, rng)
        rel_path = f"wav/{utt_id}.wav"
        save_waveform(out_dir / rel_path, wave)
        return ManifestEntry(
            utt_id=utt_id,
            path=rel_path,
            scenario_label=spec.label,
            duration_s=wave.duration_s,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(render, jobs))
    else:
        entries = [render(job) for job in jobs]

    manifest = Manifest(entries=tuple(entries), root=out_dir)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    log.info("generated %d utterances across %d scenarios under %s",
             len(entries), len(specs), out_dir)
    return manifest


def save_manifest(manifest: Manifest, path) -> None:
    """Write entries as header-less TSV: utt_id, path, label, duration_s."""
    lines = [
        f"{e.utt_id}\t{e.path}\t{e.scenario_label}\t{e.duration_s!r}\n"
        for e in manifest.entries
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_manifest(path) -> Manifest:
    """Parse a manifest TSV, reporting 1-based line numbers on bad rows."""
    path = Path(path)
    entries = []
    seen = set()
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ValueError(
                f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}"
            )
        utt_id, rel_path, label, dur_text = cols
        try:
            duration = float(dur_text)
        except ValueError:
            raise ValueError(
                f"{path}:{lineno}: duration {dur_text!r} is not a number"
            ) from None
        if duration <= 0:
            raise ValueError(f"{path}:{lineno}: duration must be positive")
        if utt_id in seen:
            raise ValueError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        entries.append(ManifestEntry(utt_id, rel_path, label, duration))
    return Manifest(entries=tuple(entries), root=path.parent)
