"""Adam-driven triplet training over batches of clip windows.

One step: assemble a clips-by-windows batch, embed it, mine semi-hard
triplets inside the batch, backprop the hinge loss, apply Adam. The loop
keeps everything float64, re-checks the unit-norm output invariant after
every update, and aborts with a state dump if anything goes non-finite.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Manifest
from .dsp import DspConfig
from .model import (DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIMS, STD_FLOOR,
                    EmbeddingModel, backward, forward, forward_batch,
                    init_model, save_checkpoint)
from .pipeline import load_clip_features
from .sampling import (SamplerConfig, assemble_batch, mine_semi_hard,
                       sample_triplets)

log = logging.getLogger(__name__)

LOSS_CURVE_NAME = "loss_curve.csv"
FINAL_CHECKPOINT_NAME = "checkpoint_final.scne"
NORM_SAMPLE_SIZE = 512
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Raised when parameters or the loss stop being finite."""


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple = DEFAULT_HIDDEN_DIMS
    embed_dim: int = DEFAULT_EMBED_DIM


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    clips_per_batch: int = 8
    windows_per_clip: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    margin: float = 0.5
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.clips_per_batch < 2:
            raise ValueError("need at least 2 clips per batch to form triplets")
        if self.windows_per_clip < 2:
            raise ValueError("need at least 2 windows per clip to form pairs")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def init_adam(params) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params], t=0)


def adam_step(params, grads, state: AdamState, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = ADAM_EPS, t: int | None = None):
    """Bias-corrected Adam update, in place over the parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and state must have matching lengths")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
    state.t = state.t + 1 if t is None else t
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def compute_normalization_stats(clips, sample_size: int = NORM_SAMPLE_SIZE,
                                rng: np.random.Generator | None = None):
    """Per-feature mean/std over a window sample, std floored for safety."""
    if rng is None:
        rng = np.random.default_rng(0)
    pool = [(ci, wi) for ci, clip in enumerate(clips) for wi in range(len(clip.windows.windows))]
    if not pool:
        raise ValueError("no windows available for normalization stats")
    replace = len(pool) < sample_size
    picks = rng.choice(len(pool), size=sample_size, replace=replace)
    rows = np.stack([
        clips[pool[i][0]].windows.windows[pool[i][1]].reshape(-1) for i in picks
    ])
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    return mean, std


def _check_finite(model: EmbeddingModel, loss: float, step: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"loss went non-finite at step {step}")
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise TrainingDivergedError(
                f"layer {l} parameters went non-finite at step {step}"
            )


def _dump_divergence(out_dir: Path, model: EmbeddingModel, curve, step: int,
                     reason: str) -> Path:
    dump = {
        "step": step,
        "reason": reason,
        "recent_losses": [row[1] for row in curve[-20:]],
        "layer_abs_max": [
            float(np.max(np.abs(w))) if np.all(np.isfinite(w)) else None
            for w in model.weights
        ],
    }
    path = out_dir / f"divergence_step_{step:06d}.json"
    path.write_text(json.dumps(dump, indent=2) + "\n", encoding="utf-8")
    return path


def write_loss_curve(curve, path) -> None:
    lines = ["step,total_loss,active_fraction\n"]
    lines += [f"{step},{loss!r},{frac!r}\n" for step, loss, frac in curve]
    Path(path).write_text("".join(lines), encoding="utf-8")


def _temporal_step(window_seqs, seq_by_id, sampler_config: SamplerConfig,
                   per_clip: int, triplet_budget: int,
                   rng: np.random.Generator):
    """Sample temporal triplets for one step and index them into a batch."""
    step_config = replace(sampler_config, triplets_per_clip=per_clip,
                          rng_seed=int(rng.integers(0, 2 ** 62)))
    trips = sample_triplets(window_seqs, step_config)
    if len(trips) > triplet_budget:
        pick = rng.choice(len(trips), size=triplet_budget, replace=False)
        trips = [trips[i] for i in np.sort(pick)]
    position = {}
    refs = []
    for trip in trips:
        for ref in trip:
            if ref not in position:
                position[ref] = len(refs)
                refs.append(ref)
    windows = np.stack([seq_by_id[cid].windows[idx] for cid, idx in refs])
    triplets = np.array(
        [[position[t.anchor], position[t.positive], position[t.negative]]
         for t in trips], dtype=np.intp)
    return windows, triplets


def train(manifest: Manifest, dsp_config: DspConfig | None,
          sampler_config: SamplerConfig, model_config: ModelConfig,
          train_config: TrainConfig, out_dir, threads: int = 1):
    """Train an embedder on a corpus; returns (model, loss curve).

    Writes checkpoints at the configured cadence plus a final one, and the
    per-step loss curve CSV, all under out_dir.
    """
    if dsp_config is None:
        dsp_config = DspConfig()
    out_dir = Path(out_dir)

    clips = load_clip_features(manifest, dsp_config, threads=threads)
    temporal = sampler_config.mode == "temporal"
    if not temporal:
        if len(clips) < 2:
            raise ValueError("clip-mode training needs at least 2 usable clips")
        if len(clips) < train_config.clips_per_batch:
            raise ValueError(
                f"corpus has {len(clips)} usable clips, "
                f"fewer than clips_per_batch={train_config.clips_per_batch}"
            )

    num_bands = clips[0].windows.windows.shape[1]
    window_frames = clips[0].windows.windows.shape[2]
    model = init_model(num_bands, window_frames, model_config.hidden_dims,
                       model_config.embed_dim, seed=train_config.seed)
    stats_rng = np.random.default_rng([train_config.seed, 0])
    mean, std = compute_normalization_stats(
        [c for c in clips], rng=stats_rng)
    model.input_mean = mean
    model.input_std = std

    window_seqs = [c.windows for c in clips]
    batch_rng = np.random.default_rng([train_config.seed, 1])
    state = init_adam(model.parameters())
    probe_window = window_seqs[0].windows[0]
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = []

    # Keep temporal mode's per-step triplet count in line with what
    # clip-mode mining yields from a P x K batch.
    triplet_budget = (train_config.clips_per_batch
                      * train_config.windows_per_clip
                      * (train_config.windows_per_clip - 1))
    per_clip = max(1, -(-triplet_budget // len(window_seqs)))
    seq_by_id = {seq.clip_id: seq for seq in window_seqs}

    for step in range(1, train_config.steps + 1):
        if temporal:
            windows, triplets = _temporal_step(
                window_seqs, seq_by_id, sampler_config, per_clip,
                triplet_budget, batch_rng)
            grads, report = backward(model, windows, triplets,
                                     train_config.margin)
        else:
            batch = assemble_batch(window_seqs, train_config.clips_per_batch,
                                   train_config.windows_per_clip, batch_rng)
            embeddings = forward_batch(model, batch.windows)
            triplets = mine_semi_hard(embeddings, batch.clip_ids,
                                      train_config.margin)
            grads, report = backward(model, batch.windows, triplets,
                                     train_config.margin)
        adam_step(model.parameters(), grads.parameters(), state,
                  train_config.learning_rate, train_config.beta1,
                  train_config.beta2)
        curve.append((step, report.total_loss, report.active_fraction))

        try:
            _check_finite(model, report.total_loss, step)
        except TrainingDivergedError as err:
            dump = _dump_divergence(out_dir, model, curve, step, str(err))
            log.error("training diverged at step %d, state dumped to %s",
                      step, dump)
            raise

        norm = float(np.linalg.norm(forward(model, probe_window)))
        if abs(norm - 1.0) > 1e-9:
            raise TrainingDivergedError(
                f"unit-norm output invariant broken at step {step}: |y| = {norm}"
            )

        if step % train_config.checkpoint_every == 0 and step != train_config.steps:
            save_checkpoint(model, out_dir / f"checkpoint_{step:06d}.scne")

    save_checkpoint(model, out_dir / FINAL_CHECKPOINT_NAME)
    write_loss_curve(curve, out_dir / LOSS_CURVE_NAME)
    log.info("trained %d steps; final loss %.4f", train_config.steps,
             curve[-1][1])
    return model, curve
