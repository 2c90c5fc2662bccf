"""Spot-checking the hand-written backward pass against finite differences.

The embedder's gradients are derived and coded manually (no autograd in
this package), so it is worth seeing the verification trick used by the
test suite in miniature: perturb one parameter, recompute the loss, and
compare the slope to what backward() reported.
"""

import numpy as np

from scenefeat import backward, forward_batch, init_model, triplet_loss

SEED = 5
MARGIN = 0.5
EPS = 1e-5

rng = np.random.default_rng(SEED)
model = init_model(num_bands=6, window_frames=8, hidden_dims=(10, 7),
                   embed_dim=4, seed=SEED)
print("layers:", [w.shape for w in model.weights])

windows = rng.normal(size=(9, 6, 8))
triplets = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8], [1, 0, 4]])

grads, report = backward(model, windows, triplets, MARGIN)
print(f"loss = {report.total_loss:.6f}, "
      f"active fraction = {report.active_fraction:.2f}")


def loss_at(m):
    emb = forward_batch(m, windows)
    return sum(triplet_loss(emb[a], emb[p], emb[n], MARGIN)
               for a, p, n in triplets)


# Central differences on a handful of random coordinates per parameter.
worst = 0.0
params = model.parameters()
for pi, (param, grad) in enumerate(zip(params, grads.parameters())):
    flat_idx = rng.choice(param.size, size=min(5, param.size), replace=False)
    for fi in flat_idx:
        idx = np.unravel_index(fi, param.shape)
        orig = param[idx]
        param[idx] = orig + EPS
        up = loss_at(model)
        param[idx] = orig - EPS
        down = loss_at(model)
        param[idx] = orig
        numeric = (up - down) / (2 * EPS)
        analytic = grad[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, rel)
        if pi == 0 and fi == flat_idx[0]:
            print(f"sample coordinate: analytic {analytic:+.8f}  "
                  f"numeric {numeric:+.8f}")

print(f"worst relative error over all checked coordinates: {worst:.2e}")
assert worst <= 1e-4

# Triplets sitting exactly on the hinge contribute nothing; push the
# margin to zero with identical positive/negative and the gradient of
# that triplet vanishes.
degenerate = np.array([[0, 1, 1]])
g0, r0 = backward(model, windows, degenerate, 0.0)
print(f"degenerate triplet: loss = {r0.total_loss}, "
      f"max |grad| = {max(np.abs(g).max() for g in g0.parameters()):.1e}")
