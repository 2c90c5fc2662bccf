"""Unit-norm MLP window embedder with hand-derived gradients.

The network flattens a (num_bands, window_frames) patch, standardizes it
with stored per-feature statistics, runs ReLU hidden layers, and L2
normalizes the final linear output. Everything is float64 and the
backward pass is exact, which the tests hold against central finite
differences.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"SCNE"
CHECKPOINT_VERSION = 1

DEFAULT_HIDDEN_DIMS = (256, 128)
DEFAULT_EMBED_DIM = 64
STD_FLOOR = 1e-8


@dataclass
class EmbeddingModel:
    weights: list  # layer l maps (fan_in, fan_out)
    biases: list
    feature_shape: tuple  # (num_bands, window_frames)
    input_mean: np.ndarray
    input_std: np.ndarray

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list:
        return list(self.weights) + list(self.biases)


@dataclass
class Gradients:
    weights: list
    biases: list

    def parameters(self) -> list:
        return list(self.weights) + list(self.biases)


@dataclass(frozen=True)
class LossReport:
    total_loss: float
    active_fraction: float
    per_triplet: np.ndarray


def init_model(num_bands: int, window_frames: int,
               hidden_dims=DEFAULT_HIDDEN_DIMS,
               embed_dim: int = DEFAULT_EMBED_DIM,
               seed: int = 0) -> EmbeddingModel:
    """Glorot-uniform weights, zero biases, identity input stats."""
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if num_bands < 1 or window_frames < 1:
        raise ValueError("feature shape dims must be >= 1")
    if len(hidden_dims) < 1:
        raise ValueError("need at least one hidden layer")
    if any(h < 1 for h in hidden_dims):
        raise ValueError(f"hidden dims must be >= 1, got {hidden_dims}")
    if embed_dim < 2:
        raise ValueError(f"embed_dim must be >= 2, got {embed_dim}")

    dims = [num_bands * window_frames, *hidden_dims, embed_dim]
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(
        weights=weights,
        biases=biases,
        feature_shape=(num_bands, window_frames),
        input_mean=np.zeros(dims[0]),
        input_std=np.ones(dims[0]),
    )


def _standardize(model: EmbeddingModel, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1:] != model.feature_shape:
        raise ValueError(
            f"windows shape {windows.shape} does not match model feature "
            f"shape {model.feature_shape}"
        )
    if windows.size and not np.all(np.isfinite(windows)):
        raise ValueError("windows contain non-finite values")
    flat = windows.reshape(windows.shape[0], -1)
    return (flat - model.input_mean) / model.input_std


def _forward_cached(model: EmbeddingModel, windows: np.ndarray):
    """Run the net, keeping activations and pre-activations for backward."""
    h = _standardize(model, windows)
    activations = [h]
    pre_acts = []
    last = model.num_layers - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre_acts.append(z)
        h = z if l == last else np.maximum(z, 0.0)
        activations.append(h)
    u = activations[-1]
    norms = np.linalg.norm(u, axis=1)
    y = np.zeros_like(u)
    nonzero = norms > 0.0
    y[nonzero] = u[nonzero] / norms[nonzero, None]
    y[~nonzero, 0] = 1.0  # exact-zero pre-norm output falls back to e1
    return y, u, norms, activations, pre_acts


def forward_batch(model: EmbeddingModel, windows: np.ndarray) -> np.ndarray:
    """Embed (B, num_bands, window_frames) windows to (B, embed_dim) unit rows."""
    y, _, _, _, _ = _forward_cached(model, windows)
    return y


def forward(model: EmbeddingModel, window: np.ndarray) -> np.ndarray:
    """Embed a single (num_bands, window_frames) window to a unit vector."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError(f"expected a 2-D window, got shape {window.shape}")
    return forward_batch(model, window[None])[0]


def triplet_loss(anchor, positive, negative, margin: float) -> float:
    """Hinge on squared distances: max(0, d(a,p) - d(a,n) + margin)."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negative = np.asarray(negative, dtype=np.float64)
    d_ap = np.sum((anchor - positive) ** 2)
    d_an = np.sum((anchor - negative) ** 2)
    return float(max(0.0, d_ap - d_an + margin))


def backward(model: EmbeddingModel, windows: np.ndarray,
             triplets: np.ndarray, margin: float):
    """Exact parameter gradients of the summed triplet hinge loss.

    triplets is an (M, 3) int array of (anchor, positive, negative) batch
    indices. Triplets sitting exactly on the hinge contribute zero
    gradient. Returns (Gradients, LossReport).
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    triplets = np.asarray(triplets)
    if triplets.ndim != 2 or triplets.shape[1] != 3:
        raise ValueError(f"triplets must be (M, 3), got shape {triplets.shape}")
    batch_size = windows.shape[0]
    if triplets.size and (triplets.min() < 0 or triplets.max() >= batch_size):
        raise ValueError("triplet indices out of range for this batch")

    y, u, norms, activations, pre_acts = _forward_cached(model, windows)

    a_idx = triplets[:, 0]
    p_idx = triplets[:, 1]
    n_idx = triplets[:, 2]
    diff_ap = y[a_idx] - y[p_idx]
    diff_an = y[a_idx] - y[n_idx]
    slack = np.sum(diff_ap ** 2, axis=1) - np.sum(diff_an ** 2, axis=1) + margin
    per_triplet = np.maximum(slack, 0.0)
    active = slack > 0.0

    dy = np.zeros_like(y)
    if np.any(active):
        # d loss / d y_a = 2 (y_n - y_p); likewise for the other roles.
        np.add.at(dy, a_idx[active], 2.0 * (y[n_idx] - y[p_idx])[active])
        np.add.at(dy, p_idx[active], -2.0 * diff_ap[active])
        np.add.at(dy, n_idx[active], 2.0 * diff_an[active])

    # Through y = u / |u|: du = (dy - (dy . y) y) / |u|; zero-norm rows
    # used the constant e1 fallback, so they pass no gradient.
    du = np.zeros_like(dy)
    nz = norms > 0.0
    inner = np.sum(dy[nz] * y[nz], axis=1, keepdims=True)
    du[nz] = (dy[nz] - inner * y[nz]) / norms[nz, None]

    grad_w = [None] * model.num_layers
    grad_b = [None] * model.num_layers
    g = du
    for l in range(model.num_layers - 1, -1, -1):
        grad_w[l] = activations[l].T @ g
        grad_b[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ model.weights[l].T) * (pre_acts[l - 1] > 0.0)

    report = LossReport(
        total_loss=float(per_triplet.sum()),
        active_fraction=float(active.mean()) if active.size else 0.0,
        per_triplet=per_triplet,
    )
    return Gradients(weights=grad_w, biases=grad_b), report


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Serialize weights, biases, and input stats (SCNE, little-endian)."""
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<II", CHECKPOINT_VERSION, model.num_layers)]
    for w, b in zip(model.weights, model.biases):
        rows, cols = w.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    num_bands, window_frames = model.feature_shape
    parts.append(struct.pack("<II", num_bands, window_frames))
    parts.append(np.ascontiguousarray(model.input_mean, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.input_std, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.raw):
            raise ValueError(f"{self.path}: checkpoint truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32_pair(self):
        return struct.unpack("<II", self.take(8))

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def load_checkpoint(path) -> EmbeddingModel:
    """Read an SCNE checkpoint, validating structure and layer chaining."""
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic, want {CHECKPOINT_MAGIC!r}")
    version, num_layers = reader.u32_pair()
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if not 1 <= num_layers <= 64:
        raise ValueError(f"{path}: implausible layer count {num_layers}")

    weights = []
    biases = []
    for l in range(num_layers):
        rows, cols = reader.u32_pair()
        if rows < 1 or cols < 1:
            raise ValueError(f"{path}: layer {l} has empty shape ({rows}, {cols})")
        if weights and weights[-1].shape[1] != rows:
            raise ValueError(
                f"{path}: layer {l} fan-in {rows} does not chain from "
                f"previous fan-out {weights[-1].shape[1]}"
            )
        weights.append(reader.f64_array(rows * cols).reshape(rows, cols))
        biases.append(reader.f64_array(cols))

    num_bands, window_frames = reader.u32_pair()
    input_dim = num_bands * window_frames
    if input_dim != weights[0].shape[0]:
        raise ValueError(
            f"{path}: stats shape {num_bands}x{window_frames} does not match "
            f"first-layer fan-in {weights[0].shape[0]}"
        )
    mean = reader.f64_array(input_dim)
    std = reader.f64_array(input_dim)
    if reader.pos != len(reader.raw):
        raise ValueError(
            f"{path}: {len(reader.raw) - reader.pos} trailing bytes after stats"
        )
    if np.any(std <= 0):
        raise ValueError(f"{path}: input std must be positive everywhere")
    return EmbeddingModel(
        weights=weights,
        biases=biases,
        feature_shape=(int(num_bands), int(window_frames)),
        input_mean=mean,
        input_std=std,
    )
