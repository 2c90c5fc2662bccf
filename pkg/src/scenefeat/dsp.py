"""Log-mel spectrograms, MFCCs, and fixed-size context windows.

The chain is deliberately plain: Hann window, magnitude-squared DFT,
triangular mel filterbank (HTK mel scale), natural log with a floor.
Context windows are overlapping band-by-frame patches cut from the
log-mel matrix; they are the model's input unit.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

SUPPORTED_SAMPLE_RATES = (8000, 16000)

DEFAULT_FRAME_LEN_S = 0.025
DEFAULT_FRAME_HOP_S = 0.010
DEFAULT_NUM_BANDS = 40
DEFAULT_FMIN_HZ = 60.0
# Default fmax is sample_rate / 2 minus this guard band.
FMAX_GUARD_HZ = 200.0
LOG_FLOOR = 1e-10

DEFAULT_WINDOW_FRAMES = 96
DEFAULT_WINDOW_HOP_FRAMES = 48


@dataclass(frozen=True)
class Waveform:
    """Mono audio in [-1, 1] at a supported sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate not in SUPPORTED_SAMPLE_RATES:
            raise ValueError(
                f"unsupported sample rate {self.sample_rate}, "
                f"expected one of {SUPPORTED_SAMPLE_RATES}"
            )
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    """Triangular mel filterbank layout. fmax_hz=None means sr/2 - 200."""

    num_bands: int = DEFAULT_NUM_BANDS
    fmin_hz: float = DEFAULT_FMIN_HZ
    fmax_hz: float | None = None

    def resolve_fmax(self, sample_rate: int) -> float:
        if self.fmax_hz is None:
            return sample_rate / 2.0 - FMAX_GUARD_HZ
        return float(self.fmax_hz)


@dataclass(frozen=True)
class LogMelSpectrogram:
    frames: np.ndarray  # (num_frames, num_bands)
    frame_hop_s: float
    mel_config: MelConfig

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bands(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class MfccMatrix:
    frames: np.ndarray  # (num_frames, num_ceps)
    frame_hop_s: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class WindowSequence:
    """Ordered context windows from one clip, each (num_bands, window_frames)."""

    windows: np.ndarray  # (num_windows, num_bands, window_frames)
    window_hop_s: float
    clip_id: str = ""
    too_short: bool = False

    def __len__(self) -> int:
        return self.windows.shape[0]


@dataclass(frozen=True)
class DspConfig:
    """Front-end settings shared by training, evaluation, and the CLI."""

    frame_len_s: float = DEFAULT_FRAME_LEN_S
    frame_hop_s: float = DEFAULT_FRAME_HOP_S
    mel: MelConfig = field(default_factory=MelConfig)
    window_frames: int = DEFAULT_WINDOW_FRAMES
    window_hop_frames: int = DEFAULT_WINDOW_HOP_FRAMES


def hz_to_mel(hz):
    """HTK mel scale: mel(f) = 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig, sample_rate: int, n_fft: int) -> np.ndarray:
    """Build a (num_bands, n_fft // 2 + 1) triangular filterbank.

    Band m rises linearly from hz_points[m] to hz_points[m + 1] and falls
    to hz_points[m + 2], with the F + 2 points equally spaced in mel.
    Weights peak at 1 and are evaluated at the exact bin frequencies.
    """
    fmax = config.resolve_fmax(sample_rate)
    if config.num_bands < 1:
        raise ValueError(f"num_bands must be >= 1, got {config.num_bands}")
    if config.fmin_hz < 0:
        raise ValueError(f"fmin_hz must be >= 0, got {config.fmin_hz}")
    if fmax <= config.fmin_hz:
        raise ValueError(f"fmax {fmax} Hz must exceed fmin {config.fmin_hz} Hz")
    if fmax > sample_rate / 2.0:
        raise ValueError(f"fmax {fmax} Hz exceeds Nyquist {sample_rate / 2.0} Hz")

    mel_points = np.linspace(
        hz_to_mel(config.fmin_hz), hz_to_mel(fmax), config.num_bands + 2
    )
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)

    lower = hz_points[:-2, None]
    center = hz_points[1:-1, None]
    upper = hz_points[2:, None]
    rising = (bin_freqs - lower) / np.maximum(center - lower, 1e-12)
    falling = (upper - bin_freqs) / np.maximum(upper - center, 1e-12)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def log_mel(
    waveform: Waveform,
    frame_len_s: float = DEFAULT_FRAME_LEN_S,
    frame_hop_s: float = DEFAULT_FRAME_HOP_S,
    mel_config: MelConfig | None = None,
) -> LogMelSpectrogram:
    """Compute a log mel spectrogram, one row per complete frame.

    Per frame: Hann window, magnitude-squared DFT, triangular mel
    integration, natural log floored at LOG_FLOOR. Only complete frames
    are emitted: num_frames = 1 + floor((n - frame_len) / hop).
    """
    if mel_config is None:
        mel_config = MelConfig()
    sr = waveform.sample_rate
    frame_len = int(round(frame_len_s * sr))
    hop = int(round(frame_hop_s * sr))
    if frame_len < 2:
        raise ValueError(f"frame length {frame_len} samples is too short")
    if hop < 1:
        raise ValueError(f"frame hop {hop} samples must be >= 1")
    if waveform.samples.size < frame_len:
        raise ValueError(
            f"waveform has {waveform.samples.size} samples, "
            f"shorter than one {frame_len}-sample frame"
        )

    frames = sliding_window_view(waveform.samples, frame_len)[::hop]
    windowed = frames * _hann_periodic(frame_len)
    power = np.abs(np.fft.rfft(windowed, axis=1)) ** 2
    fb = mel_filterbank(mel_config, sr, frame_len)
    band_energy = power @ fb.T
    resolved = MelConfig(mel_config.num_bands, mel_config.fmin_hz,
                         mel_config.resolve_fmax(sr))
    return LogMelSpectrogram(
        frames=np.log(np.maximum(band_energy, LOG_FLOOR)),
        frame_hop_s=hop / sr,
        mel_config=resolved,
    )


def mfcc(logmel: LogMelSpectrogram, num_ceps: int = 40) -> MfccMatrix:
    """Orthonormal DCT-II over bands, keeping the first num_ceps coefficients."""
    num_bands = logmel.num_bands
    if not 1 <= num_ceps <= num_bands:
        raise ValueError(
            f"num_ceps must be in [1, {num_bands}], got {num_ceps}"
        )
    coeffs = dct(logmel.frames, type=2, norm="ortho", axis=1)[:, :num_ceps]
    return MfccMatrix(frames=coeffs, frame_hop_s=logmel.frame_hop_s)


def context_windows(
    logmel: LogMelSpectrogram,
    window_frames: int = DEFAULT_WINDOW_FRAMES,
    window_hop_frames: int = DEFAULT_WINDOW_HOP_FRAMES,
    clip_id: str = "",
) -> WindowSequence:
    """Cut (num_bands, window_frames) patches every window_hop_frames frames.

    Window i covers log-mel rows [i * hop, i * hop + window_frames), so only
    complete windows appear. A clip with fewer than window_frames rows yields
    an empty sequence with too_short set; callers decide whether that is fatal.
    """
    if window_frames < 1:
        raise ValueError(f"window_frames must be >= 1, got {window_frames}")
    if window_hop_frames < 1:
        raise ValueError(f"window_hop_frames must be >= 1, got {window_hop_frames}")

    num_frames, num_bands = logmel.frames.shape
    hop_s = window_hop_frames * logmel.frame_hop_s
    if num_frames < window_frames:
        return WindowSequence(
            windows=np.empty((0, num_bands, window_frames)),
            window_hop_s=hop_s,
            clip_id=clip_id,
            too_short=True,
        )
    count = 1 + (num_frames - window_frames) // window_hop_frames
    windows = np.empty((count, num_bands, window_frames))
    for i in range(count):
        start = i * window_hop_frames
        windows[i] = logmel.frames[start:start + window_frames].T
    return WindowSequence(
        windows=windows, window_hop_s=hop_s, clip_id=clip_id, too_short=False
    )
