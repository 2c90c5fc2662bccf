"""Reading and writing the narrow WAV subset the pipeline accepts.

Only RIFF/WAVE, PCM (format tag 1), 16-bit, mono, at 8 or 16 kHz. The
parser is strict on purpose: anything outside that envelope is rejected
with a reason instead of being resampled or coerced.
"""

import struct
from pathlib import Path

import numpy as np

from .dsp import SUPPORTED_SAMPLE_RATES, Waveform

_PCM_FORMAT_TAG = 1
_INT16_SCALE = 32768.0


def load_waveform(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file and scale samples to [-1, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise ValueError(f"{path}: fmt chunk truncated ({chunk_size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise ValueError(
                    f"{path}: data chunk declares {chunk_size} bytes, "
                    f"file holds {len(body)}"
                )
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise ValueError(f"{path}: missing fmt chunk")
    if data is None:
        raise ValueError(f"{path}: missing data chunk")

    format_tag, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if format_tag != _PCM_FORMAT_TAG:
        raise ValueError(f"{path}: unsupported WAV format tag {format_tag}, want PCM (1)")
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    if bits != 16:
        raise ValueError(f"{path}: expected 16-bit samples, got {bits}-bit")
    if sample_rate not in SUPPORTED_SAMPLE_RATES:
        raise ValueError(
            f"{path}: unsupported sample rate {sample_rate}, "
            f"expected one of {SUPPORTED_SAMPLE_RATES}"
        )
    if len(data) % 2 != 0:
        raise ValueError(f"{path}: data chunk has odd byte length {len(data)}")

    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / _INT16_SCALE
    return Waveform(samples=samples, sample_rate=sample_rate)


def save_waveform(path, waveform: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file; samples are clipped to [-1, 1]."""
    path = Path(path)
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2").tobytes()
    sr = waveform.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, _PCM_FORMAT_TAG, 1, sr, sr * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(pcm))
    path.write_bytes(header + pcm)
