"""PGPE search over instance embeddings.

The mutation operator looks for an embedding whose induced NIR the current
portfolio handles worst. PGPE with symmetric sampling is written as ascent on
a reward, so it is run on ``r = -f``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

SIGMA_INIT = 1.0
ALPHA_MU = 0.05
ALPHA_SIGMA = 0.1
SIGMA_LIMIT = 0.01
DEFAULT_SAMPLES = 8


@dataclass
class PgpeState:
    mu: np.ndarray
    sigma: np.ndarray
    alpha_mu: float = ALPHA_MU
    alpha_sigma: float = ALPHA_SIGMA
    sigma_limit: float = SIGMA_LIMIT
    n_samples: int = DEFAULT_SAMPLES

    @classmethod
    def start(cls, mu, sigma_init=SIGMA_INIT, **kw):
        mu = np.array(mu, dtype=np.float64)
        return cls(mu, np.full_like(mu, sigma_init), **kw)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.maximum(np.asarray(self.sigma, dtype=np.float64), self.sigma_limit)
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must have the same shape")


def mirrored_samples(state, rng):
    """``2N`` points: ``mu + eps_i`` followed by their mirrors ``2 mu - e_i``."""
    eps = rng.standard_normal((state.n_samples, state.mu.size)) * state.sigma
    plus = state.mu + eps
    return eps, np.vstack([plus, 2.0 * state.mu - plus])


def pgpe_step(state, fitness_fn, rng, map_fn=map):
    """One PGPE update minimizing ``fitness_fn``.

    Returns ``(new_state, best_embedding, best_f)`` where the best is the
    lowest-f point among the 2N samples and the baseline ``mu``.
    """
    eps, points = mirrored_samples(state, rng)
    candidates = np.vstack([points, state.mu[None, :]])
    f = np.array(list(map_fn(fitness_fn, list(candidates))), dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("fitness function returned a non-finite value")
    n = state.n_samples
    r = -f
    r_plus, r_minus, r_base = r[:n], r[n:2 * n], r[-1]
    f_M = r_plus - r_minus
    f_S = (r_plus + r_minus) / 2.0 - r_base
    S = (eps**2 - state.sigma**2) / state.sigma
    mu = state.mu + state.alpha_mu * (eps.T @ f_M)
    sigma = np.maximum(state.sigma + state.alpha_sigma * (S.T @ f_S), state.sigma_limit)
    best = int(np.argmin(f))
    new = PgpeState(mu, sigma, state.alpha_mu, state.alpha_sigma, state.sigma_limit, n)
    return new, candidates[best].copy(), float(f[best])


def pgpe_minimize(x0, fitness_fn, max_iter, rng, n_samples=DEFAULT_SAMPLES,
                  sigma_init=SIGMA_INIT, map_fn=map):
    """Run ``max_iter`` steps from ``x0``; returns ``(best_x, best_f, trace)``.

    ``trace`` holds the best-so-far value after each step. ``best_x`` is None
    when no step ran.
    """
    state = PgpeState.start(x0, sigma_init, n_samples=n_samples)
    best_x, best_f, trace = None, np.inf, []
    for _ in range(max_iter):
        state, x, fx = pgpe_step(state, fitness_fn, rng, map_fn)
        if fx < best_f:
            best_x, best_f = x, fx
        trace.append(best_f)
    return best_x, best_f, trace


def mutate_instance(nir, portfolio, evaluator, parent_f, max_iter, rng,
                    n_samples=DEFAULT_SAMPLES, new_id=None):
    """Perturb ``nir``'s embedding so that ``portfolio`` does worse on it.

    Candidates are scored cache-free with fresh normalization bounds. Returns
    ``(instance, f)``: the hardest NIR found if it is strictly harder than
    ``parent_f``, else ``nir`` itself with ``parent_f``.
    """
    def fitness(e):
        return evaluator.fresh_quality(portfolio, nir.with_embedding(e, "pgpe-candidate"))

    if evaluator.workers > 1:
        with ThreadPoolExecutor(evaluator.workers) as pool:
            best_e, best_f, _ = pgpe_minimize(nir.embedding, fitness, max_iter, rng, n_samples,
                                              map_fn=pool.map)
    else:
        best_e, best_f, _ = pgpe_minimize(nir.embedding, fitness, max_iter, rng, n_samples)
    if best_e is None or not best_f < parent_f:
        return nir, parent_f
    return nir.with_embedding(best_e, new_id or f"{nir.id}-m"), best_f
