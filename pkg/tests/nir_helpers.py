"""Finite-difference check of the joint NIR training gradient (shared by tests)."""

import numpy as np

from papforge.nir import embed_input

from conftest import toy_shared


def nir_gradient_error(seed, d=6, n_inst=3, batch=12, h=1e-5, width=8):
    """Worst relative error over all shared weights and every embedding entry."""
    rng = np.random.default_rng(seed)
    shared = toy_shared(d, seed=seed, dtype=np.float64, width=width)
    E = rng.normal(size=(n_inst, shared.d_embed))
    x = embed_input(rng.integers(0, 2, size=(batch, d)), d).astype(np.float64)
    y = rng.random(batch)
    idx = rng.integers(0, n_inst, size=batch)
    eps = rng.normal(size=(batch, shared.d_latent))
    params = shared.parameters() + [E]
    _, grads = shared.loss_and_grads(E, x, y, idx, eps)

    def loss():
        return shared.loss_and_grads(E, x, y, idx, eps)[0]["loss"]

    worst = 0.0
    for p, g in zip(params, grads):
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss()
            p[i] = old - h
            down = loss()
            p[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6))
    return worst
