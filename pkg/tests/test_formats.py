"""Round trips and corruption rejection for the three on-disk formats."""

import struct

import numpy as np
import pytest

from scenefeat.dsp import Waveform
from scenefeat.matrixio import load_matrix, save_matrix
from scenefeat.model import (forward_batch, init_model, load_checkpoint,
                             save_checkpoint)
from scenefeat.wavio import load_waveform, save_waveform


def _wav_bytes(sample_rate=16000, channels=1, bits=16, format_tag=1,
               pcm=b"\x00\x00\x01\x00"):
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, format_tag, channels, sample_rate,
        sample_rate * channels * bits // 8, channels * bits // 8, bits,
    )
    header += b"data" + struct.pack("<I", len(pcm))
    return header + pcm


def _expect_wav_rejection(tmp_path, raw, match):
    path = tmp_path / "bad.wav"
    path.write_bytes(raw)
    with pytest.raises(ValueError, match=match):
        load_waveform(path)


def test_wav_rejection_battery(tmp_path):
    _expect_wav_rejection(tmp_path, b"OggS" + _wav_bytes()[4:], "RIFF/WAVE")
    _expect_wav_rejection(tmp_path, _wav_bytes(format_tag=3), "format tag")
    _expect_wav_rejection(tmp_path, _wav_bytes(channels=2), "mono")
    _expect_wav_rejection(tmp_path, _wav_bytes(bits=8), "16-bit")
    _expect_wav_rejection(tmp_path, _wav_bytes(sample_rate=44100), "sample rate")

    # data chunk declares more bytes than the file holds
    truncated = _wav_bytes()[:-2]
    _expect_wav_rejection(tmp_path, truncated, "data chunk declares")

    # odd-length data chunk cannot hold int16 samples
    odd = _wav_bytes(pcm=b"\x00\x00\x01")
    _expect_wav_rejection(tmp_path, odd, "odd byte length")

    # missing chunks
    no_data = _wav_bytes()[:36]
    _expect_wav_rejection(tmp_path, no_data, "missing data chunk")
    no_fmt = (b"RIFF" + struct.pack("<I", 8) + b"WAVE"
              + b"data" + struct.pack("<I", 2) + b"\x00\x00")
    _expect_wav_rejection(tmp_path, no_fmt, "missing fmt chunk")

    short_fmt = (b"RIFF" + struct.pack("<I", 12) + b"WAVE"
                 + b"fmt " + struct.pack("<I", 4) + b"\x01\x00\x01\x00")
    _expect_wav_rejection(tmp_path, short_fmt, "fmt chunk truncated")


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(21)
    original = Waveform(np.clip(rng.normal(0.0, 0.2, 8000), -1, 1), 8000)
    path = tmp_path / "rt.wav"
    save_waveform(path, original)
    loaded = load_waveform(path)
    assert loaded.sample_rate == 8000
    # Half an int16 step of rounding error plus the 32767/32768 write scale:
    # worst case (|x| + 0.5) / 32768.
    assert np.max(np.abs(loaded.samples - original.samples)) <= 1.5 / 32768


def test_wav_save_clips_out_of_range(tmp_path):
    path = tmp_path / "clip.wav"
    save_waveform(path, Waveform(np.array([-2.0, 2.0]), 16000))
    loaded = load_waveform(path)
    assert loaded.samples[0] == pytest.approx(-32767 / 32768)
    assert loaded.samples[1] == pytest.approx(32767 / 32768)


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    matrix = rng.normal(size=(17, 5)).astype(np.float32)
    path = tmp_path / "m.scnm"
    save_matrix(path, matrix)
    back = load_matrix(path)
    assert back.dtype == np.float64
    assert back.shape == (17, 5)
    assert np.array_equal(back, matrix.astype(np.float64))


def test_matrix_rejects_non_2d():
    with pytest.raises(ValueError, match="2-D"):
        save_matrix("/dev/null", np.zeros(3))


def test_matrix_corruption_battery(tmp_path):
    path = tmp_path / "m.scnm"
    save_matrix(path, np.ones((3, 4)))
    good = path.read_bytes()

    path.write_bytes(good[:10])
    with pytest.raises(ValueError, match="too short"):
        load_matrix(path)

    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(ValueError, match="bad magic"):
        load_matrix(path)

    path.write_bytes(good[:4] + struct.pack("<I", 9) + good[8:])
    with pytest.raises(ValueError, match="version"):
        load_matrix(path)

    path.write_bytes(good + b"\x00\x00\x00\x00")
    with pytest.raises(ValueError, match="expected .* bytes"):
        load_matrix(path)

    path.write_bytes(good[:-4])
    with pytest.raises(ValueError, match="expected .* bytes"):
        load_matrix(path)


def _small_model(seed=0):
    return init_model(6, 10, hidden_dims=(12,), embed_dim=4, seed=seed)


def test_checkpoint_round_trip_preserves_embeddings(tmp_path):
    model = _small_model(seed=5)
    model.input_mean[:] = np.linspace(-0.5, 0.5, 60)
    model.input_std[:] = np.linspace(0.5, 2.0, 60)
    path = tmp_path / "model.scne"
    save_checkpoint(model, path)
    back = load_checkpoint(path)

    assert back.feature_shape == model.feature_shape
    for got, want in zip(back.parameters(), model.parameters()):
        assert np.array_equal(got, want)

    rng = np.random.default_rng(8)
    windows = rng.normal(size=(7, 6, 10))
    assert np.array_equal(forward_batch(back, windows),
                          forward_batch(model, windows))


def test_checkpoint_corruption_battery(tmp_path):
    path = tmp_path / "model.scne"
    save_checkpoint(_small_model(), path)
    good = path.read_bytes()

    path.write_bytes(good[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)

    path.write_bytes(b"JUNK" + good[4:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)

    path.write_bytes(good[:4] + struct.pack("<II", 77, 2) + good[12:])
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)

    path.write_bytes(good[:4] + struct.pack("<II", 1, 999) + good[12:])
    with pytest.raises(ValueError, match="layer count"):
        load_checkpoint(path)

    path.write_bytes(good + b"\x00" * 8)
    with pytest.raises(ValueError, match="trailing bytes"):
        load_checkpoint(path)


def test_checkpoint_rejects_broken_layer_chain(tmp_path):
    model = _small_model()
    path = tmp_path / "model.scne"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    # Second layer's fan-in lives right after the first layer's payload:
    # magic+counts (12) + shape (8) + 60*12 weights + 12 biases, 8 bytes each.
    offset = 12 + 8 + 8 * (60 * 12 + 12)
    struct.pack_into("<I", raw, offset, 13)
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="chain"):
        load_checkpoint(path)


def test_checkpoint_rejects_non_positive_std(tmp_path):
    model = _small_model()
    model.input_std[3] = 0.0
    path = tmp_path / "model.scne"
    save_checkpoint(model, path)
    with pytest.raises(ValueError, match="std"):
        load_checkpoint(path)
