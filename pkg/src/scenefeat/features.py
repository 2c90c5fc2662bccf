"""Scenario vectors and per-frame feature assembly.

A clip's scenario vector is the plain arithmetic mean of its unit-norm
window embeddings, deliberately not re-normalized, so its length says
how consistent the clip's windows were. Assembly broadcasts one
utterance-level block [aux ; scenario] onto every base MFCC frame.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import MfccMatrix, WindowSequence
from .model import EmbeddingModel, forward_batch


@dataclass(frozen=True)
class ScenarioVector:
    values: np.ndarray
    utt_id: str
    num_windows_averaged: int


@dataclass(frozen=True)
class AssembledFeature:
    frames: np.ndarray  # (num_frames, num_base_dims + num_scenario_dims)
    num_base_dims: int
    num_scenario_dims: int


def embed_utterance(model: EmbeddingModel, windows: WindowSequence) -> np.ndarray:
    """Embed every context window of one clip; (num_windows, embed_dim)."""
    if len(windows) == 0:
        raise ValueError(
            f"clip {windows.clip_id!r} has no context windows to embed"
        )
    return forward_batch(model, windows.windows)


def scenario_vector(embeddings: np.ndarray, utt_id: str = "") -> ScenarioVector:
    """Mean of unit-norm window embeddings; norm <= 1 by convexity."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError(
            f"need a non-empty (num_windows, dim) array, got shape {embeddings.shape}"
        )
    return ScenarioVector(
        values=embeddings.mean(axis=0),
        utt_id=utt_id,
        num_windows_averaged=embeddings.shape[0],
    )


def assemble_features(base: MfccMatrix, aux: np.ndarray | None,
                      scenario: ScenarioVector) -> AssembledFeature:
    """Concatenate [mfcc_t ; aux ; scenario] for every base frame.

    aux is an optional utterance-level vector (speaker stats, channel
    stats, whatever the caller has); it lands between the MFCCs and the
    scenario block and counts toward the base dimensionality.
    """
    frames = np.asarray(base.frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError(f"base MFCC matrix is empty: shape {frames.shape}")
    num_frames = frames.shape[0]
    if aux is not None:
        aux = np.asarray(aux, dtype=np.float64)
        if aux.ndim != 1:
            raise ValueError(f"aux must be a 1-D vector, got shape {aux.shape}")
        frames = np.hstack([frames, np.tile(aux, (num_frames, 1))])
    scen = np.asarray(scenario.values, dtype=np.float64)
    assembled = np.hstack([frames, np.tile(scen, (num_frames, 1))])
    return AssembledFeature(
        frames=assembled,
        num_base_dims=frames.shape[1],
        num_scenario_dims=scen.shape[0],
    )
