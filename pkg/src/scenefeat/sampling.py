"""Triplet sampling by temporal proximity, plus within-batch semi-hard mining.

Two modes. "temporal" treats windows within tau of the anchor (in window
hops) as positives and everything farther, or any other clip, as
negatives. "clip" is the coarse variant: positives share the anchor's
clip, negatives come from any other clip.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SAMPLER_MODES = ("temporal", "clip")
DEFAULT_TAU_S = 10.0


class WindowRef(NamedTuple):
    clip_id: str
    index: int


class Triplet(NamedTuple):
    anchor: WindowRef
    positive: WindowRef
    negative: WindowRef


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "clip"
    tau_s: float = DEFAULT_TAU_S
    triplets_per_clip: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}, got {self.mode!r}")
        if self.tau_s <= 0:
            raise ValueError(f"tau_s must be positive, got {self.tau_s}")
        if self.triplets_per_clip < 1:
            raise ValueError(
                f"triplets_per_clip must be >= 1, got {self.triplets_per_clip}"
            )


@dataclass(frozen=True)
class Batch:
    """Windows drawn clip-major for one training step."""

    windows: np.ndarray  # (num_clips * per_clip, num_bands, window_frames)
    clip_ids: list
    refs: list  # WindowRef per row


def tau_windows(tau_s: float, window_hop_s: float) -> int:
    """Proximity radius in window hops: round-half-up, never below 1."""
    if window_hop_s <= 0:
        raise ValueError(f"window_hop_s must be positive, got {window_hop_s}")
    return max(1, int(np.floor(tau_s / window_hop_s + 0.5)))


def _check_same_hop(clips) -> float:
    hops = {c.window_hop_s for c in clips}
    if len(hops) != 1:
        raise ValueError(f"clips disagree on window hop: {sorted(hops)}")
    return hops.pop()


def sample_triplets(clips, config: SamplerConfig):
    """Draw config.triplets_per_clip triplets anchored in each eligible clip.

    Anchors are uniform over each clip's valid anchor positions; positives
    and negatives are uniform over the index sets the mode allows. In
    temporal mode the negative comes from the anchor's clip (beyond tau)
    or another clip with equal probability when both pools are non-empty.
    """
    clips = [c for c in clips if len(c) > 0]
    if not clips:
        raise ValueError("no clips with context windows to sample from")
    hop_s = _check_same_hop(clips)
    rng = np.random.default_rng(config.rng_seed)

    counts = np.array([len(c) for c in clips])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    ids = [c.clip_id for c in clips]

    if config.mode == "clip":
        if len(clips) < 2:
            raise ValueError("clip mode needs at least 2 clips with windows")
        return _sample_clip_mode(ids, counts, offsets, total, config, rng)
    return _sample_temporal_mode(ids, counts, offsets, total, hop_s, config, rng)


def _other_clip_draw(r, clip_idx, counts, offsets):
    """Map draws over 'all windows except clip clip_idx' to global indices."""
    g = np.where(r >= offsets[clip_idx], r + counts[clip_idx], r)
    owner = np.searchsorted(offsets, g, side="right") - 1
    return owner, g - offsets[owner]


def _sample_clip_mode(ids, counts, offsets, total, config, rng):
    triplets = []
    per = config.triplets_per_clip
    for ci, n in enumerate(counts):
        anchors = rng.integers(0, n, per)
        if n == 1:
            positives = anchors.copy()
        else:
            r = rng.integers(0, n - 1, per)
            positives = r + (r >= anchors)
        r = rng.integers(0, total - n, per)
        neg_clip, neg_idx = _other_clip_draw(r, ci, counts, offsets)
        for t in range(per):
            triplets.append(Triplet(
                WindowRef(ids[ci], int(anchors[t])),
                WindowRef(ids[ci], int(positives[t])),
                WindowRef(ids[int(neg_clip[t])], int(neg_idx[t])),
            ))
    return triplets


def _sample_temporal_mode(ids, counts, offsets, total, hop_s, config, rng):
    tau = tau_windows(config.tau_s, hop_s)
    triplets = []
    per = config.triplets_per_clip
    for ci, n in enumerate(counts):
        idx = np.arange(n)
        lo = np.maximum(0, idx - tau)
        hi = np.minimum(n - 1, idx + tau)
        pos_count = hi - lo  # neighbors excluding the anchor itself
        same_count = n - (hi - lo + 1)  # windows beyond tau in this clip
        other_total = total - n
        valid = (pos_count >= 1) & ((same_count >= 1) | (other_total >= 1))
        anchors_pool = idx[valid]
        if anchors_pool.size == 0:
            continue

        a = anchors_pool[rng.integers(0, anchors_pool.size, per)]
        r = rng.integers(0, pos_count[a])
        j = lo[a] + r
        j = j + (j >= a)

        use_same = np.empty(per, dtype=bool)
        both = (same_count[a] >= 1) & (other_total >= 1)
        use_same[both] = rng.random(both.sum()) < 0.5
        use_same[~both] = same_count[a][~both] >= 1

        k_clip = np.empty(per, dtype=int)
        k_idx = np.empty(per, dtype=int)
        if np.any(use_same):
            sel = use_same
            r = rng.integers(0, same_count[a][sel])
            k = np.where(r >= lo[a][sel], r + (hi[a][sel] - lo[a][sel] + 1), r)
            k_clip[sel] = ci
            k_idx[sel] = k
        if np.any(~use_same):
            sel = ~use_same
            r = rng.integers(0, other_total, sel.sum())
            oc, oi = _other_clip_draw(r, ci, counts, offsets)
            k_clip[sel] = oc
            k_idx[sel] = oi

        for t in range(per):
            triplets.append(Triplet(
                WindowRef(ids[ci], int(a[t])),
                WindowRef(ids[ci], int(j[t])),
                WindowRef(ids[int(k_clip[t])], int(k_idx[t])),
            ))

    if not triplets:
        raise ValueError(
            "temporal mode found no valid triplet: every clip is too short "
            "to hold both a positive within tau and a negative beyond it, "
            "and there is no second clip to draw negatives from"
        )
    return triplets


def assemble_batch(clips, clips_per_batch: int, windows_per_clip: int,
                   rng: np.random.Generator) -> Batch:
    """Pick clips_per_batch distinct clips, windows_per_clip windows each.

    Clips holding fewer than windows_per_clip windows are sampled with
    replacement, so short clips still fill their slots.
    """
    eligible = [c for c in clips if len(c) > 0]
    if len(eligible) < clips_per_batch:
        raise ValueError(
            f"need {clips_per_batch} clips with windows, only {len(eligible)} available"
        )
    if windows_per_clip < 1:
        raise ValueError(f"windows_per_clip must be >= 1, got {windows_per_clip}")

    chosen = rng.choice(len(eligible), size=clips_per_batch, replace=False)
    parts = []
    clip_ids = []
    refs = []
    for ci in chosen:
        clip = eligible[int(ci)]
        n = len(clip)
        picks = rng.choice(n, size=windows_per_clip, replace=n < windows_per_clip)
        parts.append(clip.windows[picks])
        clip_ids.extend([clip.clip_id] * windows_per_clip)
        refs.extend(WindowRef(clip.clip_id, int(w)) for w in picks)
    return Batch(windows=np.concatenate(parts, axis=0), clip_ids=clip_ids,
                 refs=refs)


def mine_semi_hard(embeddings: np.ndarray, clip_ids, margin: float) -> np.ndarray:
    """Pick one negative per ordered same-clip (anchor, positive) pair.

    Distances are squared Euclidean. The chosen negative is the closest one
    still farther than the positive (semi-hard); when no negative is farther,
    the farthest negative stands in as the easiest one. Ties break toward the
    lowest batch index. Returns an (num_pairs, 3) int array of batch indices.
    The margin is validated but plays no part in selection.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {embeddings.shape}")
    ids = np.asarray(clip_ids)
    if ids.shape[0] != embeddings.shape[0]:
        raise ValueError("clip_ids length does not match embeddings")
    if np.unique(ids).size < 2:
        raise ValueError("mining needs at least two distinct clips in the batch")

    diff = embeddings[:, None, :] - embeddings[None, :, :]
    d2 = np.sum(diff ** 2, axis=-1)

    out = []
    order = np.arange(ids.shape[0])
    for a in order:
        same = ids == ids[a]
        neg_idx = order[~same]
        neg_d = d2[a, ~same]
        for p in order[same]:
            if p == a:
                continue
            d_ap = d2[a, p]
            harder = neg_d > d_ap
            if np.any(harder):
                local = np.argmin(np.where(harder, neg_d, np.inf))
            else:
                local = np.argmax(neg_d)
            out.append((a, p, neg_idx[local]))
    return np.array(out, dtype=np.intp)
