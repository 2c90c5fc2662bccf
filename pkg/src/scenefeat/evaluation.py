"""Evaluation: retrieval AUC, k-means purity, linear probe, 2-D projections.

All metrics are implemented directly so their tie-breaking, convergence,
and determinism rules are pinned here rather than inherited from a
library. Everything takes an explicit seed.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import embed_utterance, scenario_vector
from .pipeline import load_clip_features

log = logging.getLogger(__name__)

KMEANS_MAX_ITERS = 300
KMEANS_REL_TOL = 1e-6
PROBE_ITERS = 500
PROBE_LR = 0.1
TSNE_MAX_POINTS = 5000
TSNE_ITERS = 500
TSNE_EARLY_EXAG = 12.0
TSNE_EXAG_ITERS = 100
TSNE_MOMENTUM_SWITCH = 250
TSNE_ENTROPY_TOL = 1e-5


@dataclass(frozen=True)
class EvalReport:
    auc: float
    purity: float
    probe_accuracy_base: float
    probe_accuracy_augmented: float
    projection_path: str

    def to_json(self) -> str:
        payload = {
            "auc": self.auc,
            "purity": self.purity,
            "probe_accuracy_base": self.probe_accuracy_base,
            "probe_accuracy_augmented": self.probe_accuracy_augmented,
            "projection_path": self.projection_path,
        }
        return json.dumps(payload, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Mann-Whitney AUC from ranks; tied scores count one half."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if pos_scores.size == 0 or neg_scores.size == 0:
        raise ValueError("need at least one score on each side")
    ranks = _average_ranks(np.concatenate([pos_scores, neg_scores]))
    n_pos = pos_scores.size
    rank_sum = ranks[:n_pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * neg_scores.size))


def same_diff_auc(embeddings: np.ndarray, clip_ids, num_pairs: int,
                  seed: int = 0) -> float:
    """AUC of same-clip vs different-clip window pairs.

    Scores are negated squared distances, so closer pairs rank higher and
    the positive class is "same clip". Pair sampling is balanced:
    num_pairs // 2 of each kind.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(clip_ids)
    if embeddings.ndim != 2 or ids.shape[0] != embeddings.shape[0]:
        raise ValueError("embeddings must be (N, D) with one clip id per row")
    if num_pairs < 2:
        raise ValueError(f"num_pairs must be >= 2, got {num_pairs}")

    unique, counts = np.unique(ids, return_counts=True)
    if unique.size < 2:
        raise ValueError("need at least two distinct clips")
    multi = unique[counts >= 2]
    if multi.size == 0:
        raise ValueError("no clip has two windows; cannot form same-clip pairs")

    rng = np.random.default_rng(seed)
    half = num_pairs // 2

    # Same-clip pairs, uniform over all unordered same-clip pairs.
    members = {c: np.flatnonzero(ids == c) for c in multi}
    pair_counts = np.array([c.size * (c.size - 1) // 2 for c in members.values()])
    weights = pair_counts / pair_counts.sum()
    clip_pick = rng.choice(multi.size, size=half, p=weights)
    pos_scores = np.empty(half)
    keys = list(members)
    for t in range(half):
        rows = members[keys[clip_pick[t]]]
        i, j = rng.choice(rows.size, size=2, replace=False)
        d = embeddings[rows[i]] - embeddings[rows[j]]
        pos_scores[t] = -np.sum(d ** 2)

    # Different-clip pairs: draw one row, then map a draw over the rest.
    clip_sizes = {c: int(n) for c, n in zip(unique, counts)}
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.searchsorted(sorted_ids, unique, side="left")
    start_of = {c: int(s) for c, s in zip(unique, starts)}
    total = ids.shape[0]
    neg_scores = np.empty(half)
    for t in range(half):
        i = int(rng.integers(0, total))
        c = ids[i]
        r = int(rng.integers(0, total - clip_sizes[c]))
        if r >= start_of[c]:
            r += clip_sizes[c]
        j = int(order[r])
        d = embeddings[i] - embeddings[j]
        neg_scores[t] = -np.sum(d ** 2)

    return rank_auc(pos_scores, neg_scores)


def _kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    """Distance-squared weighted seeding."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(0, n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(0, n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[c] = points[pick]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray):
    """Lloyd iterations with deterministic empty-cluster repair."""
    k = centers.shape[0]
    prev_inertia = np.inf
    assign = None
    for _ in range(KMEANS_MAX_ITERS):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(assign == c):
                # Farthest point from its current center claims the slot.
                dist_own = d2[np.arange(points.shape[0]), assign]
                far = int(np.argmax(dist_own))
                assign[far] = c
                d2[far, :] = np.inf
                d2[far, c] = 0.0
        for c in range(k):
            centers[c] = points[assign == c].mean(axis=0)
        inertia = float(np.sum(
            (points - centers[assign]) ** 2
        ))
        if not inertia <= prev_inertia * (1.0 + 1e-9) + 1e-12:
            raise AssertionError(
                f"k-means inertia increased: {prev_inertia} -> {inertia}"
            )
        if prev_inertia < np.inf and prev_inertia > 0:
            if (prev_inertia - inertia) / prev_inertia < KMEANS_REL_TOL:
                prev_inertia = inertia
                break
        elif prev_inertia == 0.0:
            break
        prev_inertia = inertia
    return assign, centers, prev_inertia


def kmeans_cluster(points: np.ndarray, k: int, restarts: int = 10,
                   seed: int = 0):
    """Best-of-restarts k-means; returns (assignments, inertia)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    if not 1 <= k <= points.shape[0]:
        raise ValueError(f"k must be in [1, {points.shape[0]}], got {k}")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")

    rng = np.random.default_rng(seed)
    best_assign = None
    best_inertia = np.inf
    for _ in range(restarts):
        centers = _kmeans_pp_init(points, k, rng)
        assign, _, inertia = _lloyd(points, centers.copy())
        if inertia < best_inertia:
            best_inertia = inertia
            best_assign = assign
    return best_assign, float(best_inertia)


def kmeans_purity(points: np.ndarray, labels, k: int, restarts: int = 10,
                  seed: int = 0) -> float:
    """Cluster, then score sum-of-majority-label counts over N."""
    labels = np.asarray(labels)
    points = np.asarray(points, dtype=np.float64)
    if labels.shape[0] != points.shape[0]:
        raise ValueError("labels length does not match points")
    assign, _ = kmeans_cluster(points, k, restarts=restarts, seed=seed)
    correct = 0
    for c in range(k):
        cluster_labels = labels[assign == c]
        if cluster_labels.size == 0:
            continue
        _, counts = np.unique(cluster_labels, return_counts=True)
        correct += counts.max()
    return float(correct / labels.shape[0])


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def probe_loss_and_grad(weights: np.ndarray, X: np.ndarray, onehot: np.ndarray,
                        l2_weight: float):
    """Mean cross-entropy of softmax(X @ W) plus L2 on non-bias rows.

    X is expected to already carry a trailing 1s column for the bias.
    """
    n = X.shape[0]
    probs = _softmax(X @ weights)
    eps = 1e-12
    loss = -np.mean(np.sum(onehot * np.log(probs + eps), axis=1))
    penalty = weights.copy()
    penalty[-1, :] = 0.0  # bias row is not penalized
    loss += l2_weight * np.sum(penalty ** 2)
    grad = X.T @ (probs - onehot) / n + 2.0 * l2_weight * penalty
    return loss, grad


def linear_probe(train_x: np.ndarray, train_y, test_x: np.ndarray, test_y,
                 l2_weight: float = 1e-3) -> float:
    """Multinomial logistic regression by full-batch GD; returns test accuracy.

    500 iterations at lr 0.1 from zero weights. Features are z-scored with
    train statistics so the fixed step size behaves across feature scales.
    Test rows whose class never appears in training are dropped from the
    denominator, with a warning carrying the count.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    if train_x.ndim != 2 or test_x.ndim != 2:
        raise ValueError("features must be 2-D")
    if train_x.shape[0] != train_y.shape[0]:
        raise ValueError("train features and labels disagree on length")
    if test_x.shape[0] != test_y.shape[0]:
        raise ValueError("test features and labels disagree on length")
    if train_x.shape[1] != test_x.shape[1]:
        raise ValueError("train and test feature widths differ")
    if l2_weight < 0:
        raise ValueError(f"l2_weight must be >= 0, got {l2_weight}")

    classes = np.unique(train_y)
    known = np.isin(test_y, classes)
    dropped = int((~known).sum())
    if dropped:
        log.warning("linear probe: %d test rows have classes unseen in "
                    "training and are excluded", dropped)
    test_x = test_x[known]
    test_y = test_y[known]
    if test_x.shape[0] == 0:
        raise ValueError("no test rows left after dropping unseen classes")

    mean = train_x.mean(axis=0)
    std = np.maximum(train_x.std(axis=0), 1e-8)
    train_z = np.hstack([(train_x - mean) / std,
                         np.ones((train_x.shape[0], 1))])
    test_z = np.hstack([(test_x - mean) / std,
                        np.ones((test_x.shape[0], 1))])

    class_index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((train_z.shape[0], classes.size))
    for row, y in enumerate(train_y):
        onehot[row, class_index[y]] = 1.0

    weights = np.zeros((train_z.shape[1], classes.size))
    for _ in range(PROBE_ITERS):
        _, grad = probe_loss_and_grad(weights, train_z, onehot, l2_weight)
        weights -= PROBE_LR * grad

    predicted = classes[np.argmax(test_z @ weights, axis=1)]
    return float(np.mean(predicted == test_y))


def pca_2d(vectors: np.ndarray):
    """Top-2 principal components; returns (coords, eigenvalues).

    Sign convention: each component's largest-magnitude entry is positive.
    All-identical input yields all-zero coordinates.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("pca needs at least 2 vectors")
    if x.shape[1] < 2:
        raise ValueError("pca needs at least 2 dimensions")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = np.argsort(eigvals)[::-1][:2]
    components = eigvecs[:, top]
    for c in range(2):
        lead = np.argmax(np.abs(components[:, c]))
        if components[lead, c] < 0:
            components[:, c] = -components[:, c]
    return centered @ components, eigvals[top]


def _entropy_beta_search(d2_row: np.ndarray, log_perplexity: float):
    """Find beta so the conditional distribution hits the target entropy."""
    beta = 1.0
    lo, hi = -np.inf, np.inf
    p = np.zeros_like(d2_row)
    for _ in range(60):
        p = np.exp(-d2_row * beta)
        total = p.sum()
        if total <= 0:
            h = 0.0
            p = np.zeros_like(d2_row)
        else:
            p = p / total
            nz = p > 0
            h = float(-(p[nz] * np.log(p[nz])).sum())
        diff = h - log_perplexity
        if abs(diff) < TSNE_ENTROPY_TOL:
            break
        if diff > 0:
            lo = beta
            beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
    return p


def tsne_2d(vectors: np.ndarray, perplexity: float = 30.0,
            iters: int = TSNE_ITERS, learning_rate: float = 200.0,
            seed: int = 0):
    """Exact O(N^2) t-SNE to 2-D; returns (coords, per-iter KL history).

    Early exaggeration multiplies P by 12 for the first 100 iterations;
    momentum steps from 0.5 to 0.8 at iteration 250. The KL history is
    always measured against the un-exaggerated P.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 4:
        raise ValueError("t-SNE needs at least 4 vectors")
    n = x.shape[0]
    if n > TSNE_MAX_POINTS:
        raise ValueError(
            f"t-SNE input has {n} rows, above the {TSNE_MAX_POINTS} cap; "
            "subsample before projecting"
        )
    if not 1.0 <= perplexity <= (n - 1) / 3.0:
        raise ValueError(
            f"perplexity must be in [1, {(n - 1) / 3.0:.1f}] for {n} points"
        )

    sq = np.sum(x ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    log_perp = np.log(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        p = _entropy_beta_search(row, log_perp)
        cond[i, np.arange(n) != i] = p
    p_joint = (cond + cond.T) / (2.0 * n)
    p_joint = np.maximum(p_joint, 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    kl_history = []
    for it in range(iters):
        p_eff = p_joint * TSNE_EARLY_EXAG if it < TSNE_EXAG_ITERS else p_joint
        ysq = np.sum(y ** 2, axis=1)
        num = 1.0 / (1.0 + np.maximum(
            ysq[:, None] + ysq[None, :] - 2.0 * (y @ y.T), 0.0))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)

        pq = (p_eff - q) * num
        grad = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)

        momentum = 0.5 if it < TSNE_MOMENTUM_SWITCH else 0.8
        velocity = momentum * velocity - learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)

        kl = float(np.sum(p_joint * np.log(p_joint / q)))
        kl_history.append(kl)
    return y, kl_history


def project_2d(vectors: np.ndarray, method: str = "pca",
               perplexity: float = 30.0, seed: int = 0) -> np.ndarray:
    """Dispatch to PCA or t-SNE; returns (N, 2) coordinates."""
    if method == "pca":
        coords, _ = pca_2d(vectors)
        return coords
    if method == "tsne":
        coords, _ = tsne_2d(vectors, perplexity=perplexity, seed=seed)
        return coords
    raise ValueError(f"unknown projection method {method!r}, want pca or tsne")


def _alternating_split(utt_ids, labels):
    """Stratified 50/50 split: within each label, sort by id, alternate."""
    train_idx = []
    test_idx = []
    labels = np.asarray(labels)
    for label in np.unique(labels):
        rows = np.flatnonzero(labels == label)
        rows = rows[np.argsort(np.asarray(utt_ids, dtype=object)[rows])]
        train_idx.extend(rows[0::2])
        test_idx.extend(rows[1::2])
    return np.array(sorted(train_idx)), np.array(sorted(test_idx))


PROJECTION_NAME = "projection.csv"
REPORT_NAME = "eval_report.json"
DEFAULT_NUM_PAIRS = 20000


def evaluate_corpus(manifest, model, out_dir, dsp_config=None,
                    num_pairs: int = DEFAULT_NUM_PAIRS, restarts: int = 10,
                    l2_weight: float = 1e-3, seed: int = 0,
                    threads: int = 1) -> EvalReport:
    """Run the full metric battery over a corpus with one embedder.

    Computes window-level same/diff-clip AUC, k-means purity of scenario
    vectors against scenario labels (k = number of labels), and the linear
    probe contrast between per-utterance mean MFCCs and the same features
    with the scenario vector appended. Writes projection.csv (PCA of the
    scenario vectors) and eval_report.json under out_dir.
    """
    out_dir = Path(out_dir)
    clips = load_clip_features(manifest, dsp_config, with_mfcc=True,
                               threads=threads)
    out_dir.mkdir(parents=True, exist_ok=True)

    window_embeddings = []
    window_clip_ids = []
    scenario_rows = []
    base_rows = []
    utt_ids = []
    labels = []
    for clip in clips:
        emb = embed_utterance(model, clip.windows)
        window_embeddings.append(emb)
        window_clip_ids.extend([clip.utt_id] * emb.shape[0])
        scenario_rows.append(scenario_vector(emb, utt_id=clip.utt_id).values)
        base_rows.append(clip.mfcc.frames.mean(axis=0))
        utt_ids.append(clip.utt_id)
        labels.append(clip.label)

    all_windows = np.concatenate(window_embeddings, axis=0)
    scenario_mat = np.stack(scenario_rows)
    base_mat = np.stack(base_rows)
    labels_arr = np.asarray(labels)

    auc = same_diff_auc(all_windows, window_clip_ids, num_pairs=num_pairs,
                        seed=seed)
    k = int(np.unique(labels_arr).size)
    purity = kmeans_purity(scenario_mat, labels_arr, k=k, restarts=restarts,
                           seed=seed)

    train_idx, test_idx = _alternating_split(utt_ids, labels_arr)
    augmented_mat = np.hstack([base_mat, scenario_mat])
    probe_base = linear_probe(base_mat[train_idx], labels_arr[train_idx],
                              base_mat[test_idx], labels_arr[test_idx],
                              l2_weight=l2_weight)
    probe_aug = linear_probe(augmented_mat[train_idx], labels_arr[train_idx],
                             augmented_mat[test_idx], labels_arr[test_idx],
                             l2_weight=l2_weight)

    coords, _ = pca_2d(scenario_mat)
    write_projection_csv(out_dir / PROJECTION_NAME, utt_ids, coords, labels)

    report = EvalReport(
        auc=auc,
        purity=purity,
        probe_accuracy_base=probe_base,
        probe_accuracy_augmented=probe_aug,
        projection_path=PROJECTION_NAME,
    )
    report.save(out_dir / REPORT_NAME)
    return report


def write_projection_csv(path, utt_ids, coords: np.ndarray, labels) -> None:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (len(utt_ids), 2):
        raise ValueError(f"coords shape {coords.shape} does not match ids")
    lines = ["utt_id,x,y,label\n"]
    for utt_id, (x, y), label in zip(utt_ids, coords, labels):
        # Plain-float repr keeps full precision without numpy's scalar tag.
        lines.append(f"{utt_id},{float(x)!r},{float(y)!r},{label}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
