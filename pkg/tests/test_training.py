"""Adam arithmetic, the training loop contract, and divergence handling."""

import numpy as np
import pytest

from scenefeat.corpus import default_scenarios, generate_corpus
from scenefeat.dsp import WindowSequence
from scenefeat.model import STD_FLOOR, load_checkpoint
from scenefeat.pipeline import ClipFeatures
from scenefeat.sampling import SamplerConfig
from scenefeat.training import (FINAL_CHECKPOINT_NAME, LOSS_CURVE_NAME,
                                ModelConfig, TrainConfig,
                                TrainingDivergedError, adam_step,
                                compute_normalization_stats, init_adam, train,
                                write_loss_curve)

SMALL_MODEL = ModelConfig(hidden_dims=(16,), embed_dim=4)


def test_train_config_validation():
    with pytest.raises(ValueError, match="steps"):
        TrainConfig(steps=0)
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="betas"):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError, match="betas"):
        TrainConfig(beta2=-0.1)
    with pytest.raises(ValueError, match="margin"):
        TrainConfig(margin=-0.5)
    with pytest.raises(ValueError, match="2 clips"):
        TrainConfig(clips_per_batch=1)
    with pytest.raises(ValueError, match="2 windows"):
        TrainConfig(windows_per_clip=1)
    with pytest.raises(ValueError, match="checkpoint_every"):
        TrainConfig(checkpoint_every=0)


def test_adam_first_step_hand_value():
    # t=1, g=1: both bias corrections cancel the decay exactly, so the
    # update is -lr / (1 + eps) = -0.000999999...
    params = [np.array([0.0])]
    grads = [np.array([1.0])]
    state = init_adam(params)
    adam_step(params, grads, state, learning_rate=0.001)
    assert state.t == 1
    assert params[0][0] == pytest.approx(-0.000999999, abs=2e-9)


def test_adam_zero_gradient_is_inert():
    params = [np.array([1.5, -2.0])]
    state = init_adam(params)
    for _ in range(5):
        adam_step(params, [np.zeros(2)], state, learning_rate=0.1)
    assert np.array_equal(params[0], [1.5, -2.0])
    assert np.all(state.m[0] == 0.0)
    assert np.all(state.v[0] == 0.0)


def test_adam_moments_decay_after_spike():
    params = [np.array([0.0])]
    state = init_adam(params)
    adam_step(params, [np.array([1.0])], state, learning_rate=0.001)
    m_after_spike = state.m[0][0]
    adam_step(params, [np.array([0.0])], state, learning_rate=0.001)
    assert state.m[0][0] == pytest.approx(0.9 * m_after_spike)


def test_adam_step_size_approaches_lr():
    # Under a constant gradient the bias-corrected ratio tends to sign(g),
    # so per-step movement tends to the learning rate.
    params = [np.array([0.0])]
    grads = [np.array([3.7])]
    state = init_adam(params)
    lr = 0.01
    for _ in range(3000):
        adam_step(params, grads, state, learning_rate=lr)
    before = params[0][0]
    adam_step(params, grads, state, learning_rate=lr)
    assert abs(params[0][0] - before) == pytest.approx(lr, rel=1e-3)


def test_adam_shape_validation():
    params = [np.zeros((2, 2))]
    state = init_adam(params)
    with pytest.raises(ValueError, match="shape"):
        adam_step(params, [np.zeros(3)], state, learning_rate=0.1)
    with pytest.raises(ValueError, match="matching lengths"):
        adam_step(params, [], state, learning_rate=0.1)


def _fake_clip(rng, clip_id, num_windows=4, num_bands=5, frames=6):
    windows = rng.normal(size=(num_windows, num_bands, frames))
    seq = WindowSequence(windows=windows, window_hop_s=0.48, clip_id=clip_id)
    return ClipFeatures(utt_id=clip_id, label="x", windows=seq)


def test_normalization_stats_shapes_and_floor():
    rng = np.random.default_rng(0)
    clips = [_fake_clip(rng, f"c{i}") for i in range(3)]
    mean, std = compute_normalization_stats(clips, sample_size=64,
                                            rng=np.random.default_rng(1))
    assert mean.shape == (30,)
    assert std.shape == (30,)
    assert np.all(std >= STD_FLOOR)

    # Identical constant windows: exact mean, floored std.
    flat = [ClipFeatures("k", "x", WindowSequence(
        windows=np.full((3, 5, 6), 2.5), window_hop_s=0.48, clip_id="k"))]
    mean, std = compute_normalization_stats(flat, sample_size=16,
                                            rng=np.random.default_rng(2))
    assert np.all(mean == 2.5)
    assert np.all(std == STD_FLOOR)

    with pytest.raises(ValueError, match="no windows"):
        compute_normalization_stats([], sample_size=8)


def test_normalization_stats_deterministic():
    rng = np.random.default_rng(3)
    clips = [_fake_clip(rng, f"c{i}", num_windows=7) for i in range(4)]
    a = compute_normalization_stats(clips, rng=np.random.default_rng(9))
    b = compute_normalization_stats(clips, rng=np.random.default_rng(9))
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_loss_curve_round_trips_floats(tmp_path):
    curve = [(1, 0.123456789012345, 1.0), (2, 7.25e-17, 0.5)]
    path = tmp_path / "curve.csv"
    write_loss_curve(curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,total_loss,active_fraction"
    for row, line in zip(curve, lines[1:]):
        step, loss, frac = line.split(",")
        assert (int(step), float(loss), float(frac)) == row


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinycorpus")
    return generate_corpus(default_scenarios(2), 2, out, duration_s=3.0,
                           seed=12)


def _tiny_train_config(**overrides):
    base = dict(steps=3, clips_per_batch=2, windows_per_clip=2,
                learning_rate=1e-3, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


def test_single_step_run_layout(tiny_corpus, tmp_path):
    out = tmp_path / "run"
    model, curve = train(tiny_corpus, None, SamplerConfig(mode="clip"),
                         SMALL_MODEL, _tiny_train_config(steps=1), out)
    assert len(curve) == 1
    assert curve[0][0] == 1
    assert (out / FINAL_CHECKPOINT_NAME).exists()
    assert (out / LOSS_CURVE_NAME).exists()
    assert not list(out.glob("checkpoint_0*.scne"))
    assert len(path_lines := (out / LOSS_CURVE_NAME).read_text().splitlines()) == 2
    assert path_lines[0] == "step,total_loss,active_fraction"

    # The trained model and its checkpoint embed identically.
    reloaded = load_checkpoint(out / FINAL_CHECKPOINT_NAME)
    for a, b in zip(reloaded.parameters(), model.parameters()):
        assert np.array_equal(a, b)


def test_training_is_bitwise_deterministic(tiny_corpus, tmp_path):
    cfg = _tiny_train_config(steps=4)
    _, curve_a = train(tiny_corpus, None, SamplerConfig(mode="clip"),
                       SMALL_MODEL, cfg, tmp_path / "a")
    _, curve_b = train(tiny_corpus, None, SamplerConfig(mode="clip"),
                       SMALL_MODEL, cfg, tmp_path / "b")
    assert curve_a == curve_b
    ck_a = (tmp_path / "a" / FINAL_CHECKPOINT_NAME).read_bytes()
    ck_b = (tmp_path / "b" / FINAL_CHECKPOINT_NAME).read_bytes()
    assert ck_a == ck_b
    assert ((tmp_path / "a" / LOSS_CURVE_NAME).read_text()
            == (tmp_path / "b" / LOSS_CURVE_NAME).read_text())


def test_checkpoint_cadence(tiny_corpus, tmp_path):
    out = tmp_path / "cadence"
    train(tiny_corpus, None, SamplerConfig(mode="clip"), SMALL_MODEL,
          _tiny_train_config(steps=5, checkpoint_every=2), out)
    names = sorted(p.name for p in out.glob("*.scne"))
    assert names == ["checkpoint_000002.scne", "checkpoint_000004.scne",
                     FINAL_CHECKPOINT_NAME]

    out2 = tmp_path / "cadence_even"
    train(tiny_corpus, None, SamplerConfig(mode="clip"), SMALL_MODEL,
          _tiny_train_config(steps=4, checkpoint_every=2), out2)
    names = sorted(p.name for p in out2.glob("*.scne"))
    # Step 4 is the final step; the cadence file is folded into the final.
    assert names == ["checkpoint_000002.scne", FINAL_CHECKPOINT_NAME]


def test_temporal_mode_trains(tiny_corpus, tmp_path):
    sampler = SamplerConfig(mode="temporal", tau_s=0.5)
    _, curve = train(tiny_corpus, None, sampler, SMALL_MODEL,
                     _tiny_train_config(steps=2), tmp_path / "t")
    assert len(curve) == 2
    assert all(0.0 <= frac <= 1.0 for _, _, frac in curve)


def test_clip_mode_needs_enough_clips(tiny_corpus, tmp_path):
    with pytest.raises(ValueError, match="fewer than clips_per_batch"):
        train(tiny_corpus, None, SamplerConfig(mode="clip"), SMALL_MODEL,
              _tiny_train_config(clips_per_batch=8, windows_per_clip=4),
              tmp_path / "x")


def test_divergence_aborts_with_state_dump(tiny_corpus, tmp_path):
    # A learning rate near the float64 ceiling overflows the parameters
    # within a couple of steps; the loop must abort and leave a dump.
    out = tmp_path / "diverge"
    with pytest.raises(TrainingDivergedError), \
            np.errstate(over="ignore", invalid="ignore"):
        train(tiny_corpus, None, SamplerConfig(mode="clip"), SMALL_MODEL,
              _tiny_train_config(steps=50, learning_rate=1e308), out)
    dumps = list(out.glob("divergence_step_*.json"))
    assert len(dumps) == 1
    import json
    payload = json.loads(dumps[0].read_text())
    assert {"step", "reason", "recent_losses", "layer_abs_max"} <= set(payload)
    assert payload["step"] >= 1
