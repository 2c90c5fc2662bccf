"""Embedder forward/backward checks against hand arithmetic and finite
differences."""

import numpy as np
import pytest

from scenefeat.model import (backward, forward, forward_batch, init_model,
                             triplet_loss)

MARGIN = 0.5


def test_init_shapes_and_determinism():
    model = init_model(40, 96, hidden_dims=(256, 128), embed_dim=64, seed=1)
    assert [w.shape for w in model.weights] == [(3840, 256), (256, 128),
                                                (128, 64)]
    assert model.embed_dim == 64
    assert model.feature_shape == (40, 96)
    for b in model.biases:
        assert np.all(b == 0.0)
    assert np.all(model.input_mean == 0.0)
    assert np.all(model.input_std == 1.0)

    again = init_model(40, 96, hidden_dims=(256, 128), embed_dim=64, seed=1)
    for a, b in zip(model.parameters(), again.parameters()):
        assert np.array_equal(a, b)
    other = init_model(40, 96, hidden_dims=(256, 128), embed_dim=64, seed=2)
    assert not np.array_equal(model.weights[0], other.weights[0])


def test_init_weight_range():
    model = init_model(10, 10, hidden_dims=(20,), embed_dim=4, seed=0)
    bound = np.sqrt(6.0 / (100 + 20))
    assert np.max(np.abs(model.weights[0])) <= bound


def test_init_validation():
    with pytest.raises(ValueError, match="embed_dim"):
        init_model(4, 4, hidden_dims=(8,), embed_dim=1)
    with pytest.raises(ValueError, match="hidden"):
        init_model(4, 4, hidden_dims=(), embed_dim=4)
    with pytest.raises(ValueError, match="hidden dims"):
        init_model(4, 4, hidden_dims=(0,), embed_dim=4)
    with pytest.raises(ValueError, match="feature shape"):
        init_model(0, 4, hidden_dims=(8,), embed_dim=4)


def _small_model(seed=0):
    return init_model(4, 5, hidden_dims=(8,), embed_dim=3, seed=seed)


def test_forward_outputs_unit_rows():
    model = _small_model()
    rng = np.random.default_rng(5)
    windows = rng.normal(size=(12, 4, 5))
    out = forward_batch(model, windows)
    assert out.shape == (12, 3)
    assert np.max(np.abs(np.linalg.norm(out, axis=1) - 1.0)) < 1e-6

    # Single-window and batched paths may take different BLAS kernels, so
    # agreement is to rounding, not bitwise.
    single = forward(model, windows[3])
    assert np.max(np.abs(single - out[3])) < 1e-12


def test_forward_is_pure():
    model = _small_model()
    rng = np.random.default_rng(9)
    window = rng.normal(size=(4, 5))
    batch = np.stack([window, window])
    out = forward_batch(model, batch)
    assert np.array_equal(out[0], out[1])


def test_forward_input_validation():
    model = _small_model()
    with pytest.raises(ValueError, match="does not match"):
        forward_batch(model, np.zeros((2, 5, 4)))
    with pytest.raises(ValueError, match="non-finite"):
        forward_batch(model, np.full((1, 4, 5), np.inf))
    with pytest.raises(ValueError, match="2-D"):
        forward(model, np.zeros((1, 4, 5)))


def test_zero_output_falls_back_to_first_axis():
    model = _small_model()
    model.weights[-1][:] = 0.0  # biases are already zero
    out = forward_batch(model, np.random.default_rng(0).normal(size=(3, 4, 5)))
    assert np.array_equal(out, np.tile([1.0, 0.0, 0.0], (3, 1)))


def test_triplet_loss_hand_cases():
    a, p = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert triplet_loss(a, p, np.array([-1.0, 0.0]), 0.5) == 0.0
    assert triplet_loss(a, p, np.array([0.0, -1.0]), 0.5) == pytest.approx(0.5)
    # Collapsed triplet leaves exactly the margin.
    assert triplet_loss(a, a, a, 0.5) == pytest.approx(0.5)
    # Anchor equals positive and the negative is far: zero loss.
    assert triplet_loss(a, a, -a, 0.5) == 0.0
    with pytest.raises(ValueError, match="margin"):
        triplet_loss(a, p, a, -0.1)


def test_loss_law_on_random_unit_vectors():
    rng = np.random.default_rng(13)
    for _ in range(2000):
        a, p, n = rng.normal(size=(3, 6))
        a, p, n = (v / np.linalg.norm(v) for v in (a, p, n))
        margin = float(rng.uniform(0.0, 1.0))
        slack = np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + margin
        loss = triplet_loss(a, p, n, margin)
        assert loss >= 0.0
        assert (loss == 0.0) == (slack <= 0.0)
        assert loss <= 4.0 + margin  # unit vectors bound the distances


def _random_batch(rng, model, size=10):
    windows = rng.normal(size=(size, *model.feature_shape))
    triplets = []
    while len(triplets) < 8:
        a, p, n = rng.integers(0, size, 3)
        if a != p:
            triplets.append((a, p, n))
    return windows, np.array(triplets)


def test_backward_report_is_consistent():
    model = _small_model(seed=3)
    rng = np.random.default_rng(7)
    windows, triplets = _random_batch(rng, model)
    grads, report = backward(model, windows, triplets, MARGIN)
    assert report.per_triplet.shape == (len(triplets),)
    assert np.all(report.per_triplet >= 0.0)
    assert report.total_loss == pytest.approx(report.per_triplet.sum())
    assert report.active_fraction == pytest.approx(
        np.mean(report.per_triplet > 0.0))
    for g, p in zip(grads.parameters(), model.parameters()):
        assert g.shape == p.shape
        assert np.all(np.isfinite(g))


def test_backward_validation():
    model = _small_model()
    windows = np.zeros((4, 4, 5))
    with pytest.raises(ValueError, match=r"\(M, 3\)"):
        backward(model, windows, np.zeros((3, 2), dtype=int), MARGIN)
    with pytest.raises(ValueError, match="out of range"):
        backward(model, windows, np.array([[0, 1, 9]]), MARGIN)
    with pytest.raises(ValueError, match="margin"):
        backward(model, windows, np.array([[0, 1, 2]]), -1.0)


def test_satisfied_triplets_contribute_zero_gradient():
    model = _small_model(seed=2)
    rng = np.random.default_rng(21)
    windows = rng.normal(size=(10, 4, 5))
    emb = forward_batch(model, windows)
    d2 = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=2)

    inert = [(a, p, n) for a in range(10) for p in range(10)
             for n in range(10)
             if a != p and d2[a, p] - d2[a, n] + MARGIN < -1e-6]
    assert inert, "seed produced no strictly satisfied triplet"
    grads, report = backward(model, windows, np.array(inert[:5]), MARGIN)
    assert report.total_loss == 0.0
    assert report.active_fraction == 0.0
    for g in grads.parameters():
        assert np.all(g == 0.0)


def test_margin_shift_keeps_active_gradients():
    # While the hinge stays active, the margin only shifts the loss value;
    # the parameter gradient is identical.
    model = _small_model(seed=4)
    rng = np.random.default_rng(3)
    windows = rng.normal(size=(8, 4, 5))
    emb = forward_batch(model, windows)
    d2 = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=2)
    active = [(a, p, n) for a in range(8) for p in range(8) for n in range(8)
              if a != p and d2[a, p] - d2[a, n] + 0.5 > 1e-3]
    assert active, "seed produced no active triplet"
    triplets = np.array(active[:4])

    grads_small, rep_small = backward(model, windows, triplets, 0.5)
    grads_big, rep_big = backward(model, windows, triplets, 1.0)
    assert rep_big.total_loss > rep_small.total_loss
    for gs, gb in zip(grads_small.parameters(), grads_big.parameters()):
        assert np.array_equal(gs, gb)


def _loss_through_forward(model, windows, triplets, margin):
    """Loss recomputed via the public forward path, not backward's bookkeeping."""
    emb = forward_batch(model, windows)
    return sum(triplet_loss(emb[a], emb[p], emb[n], margin)
               for a, p, n in triplets)


def _kink_distances(model, windows):
    """Smallest |pre-activation| and pre-normalization norm over a batch.

    The loss is non-differentiable at ReLU kinks, at the hinge kink, and
    at the zero-vector normalization fallback; finite differences are only
    a valid oracle away from all three.
    """
    h = windows.reshape(windows.shape[0], -1)
    min_preact = np.inf
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if l < model.num_layers - 1:
            min_preact = min(min_preact, float(np.min(np.abs(z))))
            h = np.maximum(z, 0.0)
        else:
            h = z
    return min_preact, float(np.linalg.norm(h, axis=1).min())


def smooth_gradient_case(model, rng, size=8, margin=MARGIN):
    """Deterministically search for a batch where the loss is smooth.

    Returns (windows, triplets) with every hinge slack at least 1e-2 from
    the kink and a mix of active and inactive triplets.
    """
    for _ in range(200):
        windows = rng.normal(size=(size, *model.feature_shape))
        min_preact, min_norm = _kink_distances(model, windows)
        if min_preact < 1e-3 or min_norm < 0.05:
            continue
        emb = forward_batch(model, windows)
        d2 = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=2)
        active, inactive = [], []
        for a in range(size):
            for p in range(size):
                if a == p:
                    continue
                for n in range(size):
                    slack = d2[a, p] - d2[a, n] + margin
                    if slack > 1e-2:
                        active.append((a, p, n))
                    elif slack < -1e-2:
                        inactive.append((a, p, n))
        if len(active) >= 4 and len(inactive) >= 2:
            return windows, np.array(active[:4] + inactive[:2])
    raise AssertionError("no smooth batch found; widen the search")


def test_gradients_match_central_differences():
    rng = np.random.default_rng(101)
    eps = 1e-5
    # At dead-ReLU coordinates the true gradient is exactly zero and the
    # central difference returns pure cancellation noise, about
    # ulp(total_loss) / (2 * eps) ~ 1e-10 here. Flooring the relative
    # denominator at 1e-5 makes those coordinates an absolute <= 1e-9
    # check instead of a 0-vs-noise ratio.
    rel_floor = 1e-5
    for trial in range(4):
        model = init_model(3, 4, hidden_dims=(7, 6), embed_dim=3,
                           seed=50 + trial)
        windows, triplets = smooth_gradient_case(model, rng)
        grads, report = backward(model, windows, triplets, MARGIN)
        assert report.active_fraction > 0.0

        for param, grad in zip(model.parameters(), grads.parameters()):
            flat_p = param.reshape(-1)
            flat_g = grad.reshape(-1)
            coords = rng.choice(flat_p.size,
                                size=min(12, flat_p.size), replace=False)
            for c in coords:
                original = flat_p[c]
                flat_p[c] = original + eps
                up = _loss_through_forward(model, windows, triplets, MARGIN)
                flat_p[c] = original - eps
                down = _loss_through_forward(model, windows, triplets, MARGIN)
                flat_p[c] = original
                numeric = (up - down) / (2 * eps)
                denom = max(abs(numeric), abs(flat_g[c]), rel_floor)
                assert abs(numeric - flat_g[c]) / denom <= 1e-4
