import numpy as np
import pytest
from hypothesis import given, strategies as st

from papforge.brkga import SolverConfig
from papforge.nir import NirHyper, NirInstance, sample_training_data, train_nirs
from papforge.pgpe import (PgpeState, mirrored_samples, mutate_instance, pgpe_minimize,
                           pgpe_step)
from papforge.portfolio import Evaluator, Portfolio
from papforge.problems import random_onemax

from conftest import toy_shared

WEAK = Portfolio((SolverConfig(5, 10, 5, 0.5, False),))


def test_mirror_of_zero_mean_is_negation():
    state = PgpeState.start(np.zeros(6), n_samples=4)
    _, pts = mirrored_samples(state, np.random.default_rng(0))
    assert np.array_equal(pts[4:], -pts[:4])


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 9))
def test_mirror_identity(seed, n, d):
    rng = np.random.default_rng(seed)
    state = PgpeState(rng.normal(size=d), rng.random(d) + 0.01, n_samples=n)
    eps, pts = mirrored_samples(state, rng)
    assert pts.shape == (2 * n, d)
    assert np.allclose(pts[:n] + pts[n:], 2 * state.mu, rtol=0, atol=1e-12)
    assert np.allclose(pts[:n] - state.mu, eps, atol=1e-12)


def test_constant_fitness_keeps_mu():
    state = PgpeState.start(np.arange(5.0))
    new, _, f = pgpe_step(state, lambda e: 3.0, np.random.default_rng(1))
    assert np.array_equal(new.mu, state.mu) and f == 3.0
    assert np.array_equal(new.sigma, state.sigma)


@given(st.integers(0, 10_000))
def test_sigma_never_below_limit(seed):
    rng = np.random.default_rng(seed)
    state = PgpeState.start(rng.normal(size=4), sigma_init=0.05)
    for _ in range(5):
        state, _, _ = pgpe_step(state, lambda e: float(e @ e) * 100, rng)
        assert np.all(state.sigma >= 0.01) and state.mu.shape == state.sigma.shape == (4,)


def test_update_matches_hand_computation():
    # N=1, d=2 with fitness f(e) = e[0]; reward r = -f
    state = PgpeState(np.array([1.0, 2.0]), np.array([0.5, 2.0]), n_samples=1)
    eps_draw = np.random.default_rng(7).standard_normal((1, 2))
    eps = eps_draw[0] * state.sigma
    new, best, best_f = pgpe_step(state, lambda e: float(e[0]), np.random.default_rng(7))
    r_plus, r_minus, r_base = -(1.0 + eps[0]), -(1.0 - eps[0]), -1.0
    f_m = r_plus - r_minus
    f_s = (r_plus + r_minus) / 2 - r_base
    assert np.allclose(new.mu, state.mu + 0.05 * eps * f_m)
    s = (eps**2 - state.sigma**2) / state.sigma
    assert np.allclose(new.sigma, np.maximum(state.sigma + 0.1 * s * f_s, 0.01))
    assert best_f == pytest.approx(min(1.0 + eps[0], 1.0 - eps[0], 1.0), abs=1e-15)


def test_non_finite_fitness_raises():
    with pytest.raises(FloatingPointError):
        pgpe_step(PgpeState.start(np.zeros(2)), lambda e: np.nan, np.random.default_rng(0))


def test_minimize_sphere_and_monotone_trace():
    x, f, trace = pgpe_minimize(np.full(5, 3.0), lambda e: float(e @ e), 60,
                                np.random.default_rng(0))
    assert f < 45 and np.all(np.diff(trace) <= 0) and len(trace) == 60
    assert f == pytest.approx(float(x @ x))


def test_minimize_zero_iterations():
    x, f, trace = pgpe_minimize(np.zeros(3), lambda e: 1.0, 0, np.random.default_rng(0))
    assert x is None and trace == []


def toy_evaluator(**kw):
    return Evaluator(budget=100, reps=1, nir_samples=500, **kw)


def test_mutate_zero_iterations_returns_parent():
    s = toy_shared(6)
    nir = NirInstance(s, np.ones(s.d_embed), "p")
    ev = toy_evaluator()
    f = ev.fresh_quality(WEAK, nir)
    out, f2 = mutate_instance(nir, WEAK, ev, f, 0, np.random.default_rng(0))
    assert out is nir and f2 == f


@pytest.mark.parametrize("seed", range(5))
def test_mutate_revert_invariant(seed):
    s = toy_shared(6, seed=seed)
    rng = np.random.default_rng(seed)
    nir = NirInstance(s, rng.normal(size=s.d_embed), "p")
    ev = toy_evaluator()
    f = ev.fresh_quality(WEAK, nir)
    out, f2 = mutate_instance(nir, WEAK, ev, f, 2, rng, n_samples=3, new_id="child")
    assert f2 <= f
    if out is not nir:
        assert f2 < f and out.id == "child"
        assert ev.fresh_quality(WEAK, out) == pytest.approx(f2)


def test_mutate_threaded_matches_serial():
    s = toy_shared(6, seed=2)
    nir = NirInstance(s, np.zeros(s.d_embed), "p")
    a = mutate_instance(nir, WEAK, toy_evaluator(), 10.0, 2, np.random.default_rng(3), 3)
    b = mutate_instance(nir, WEAK, toy_evaluator(workers=3), 10.0, 2,
                        np.random.default_rng(3), 3)
    assert a[1] == b[1] and np.array_equal(a[0].embedding, b[0].embedding)


@pytest.fixture(scope="module")
def onemax_nirs():
    rng = np.random.default_rng(11)
    data = [sample_training_data(random_onemax(16, rng), 4000, seed=i) for i in range(5)]
    shared, E, _ = train_nirs(data, NirHyper(max_epochs=8, patience=3, seed=2))
    return [NirInstance(shared, E[i], f"nir-{i}") for i in range(5)]


@pytest.mark.slow
def test_pgpe_beats_random_embeddings(onemax_nirs):
    wins = 0
    for trial in range(10):
        nir = onemax_nirs[trial % len(onemax_nirs)]
        ev = Evaluator(budget=200, reps=1, nir_samples=2000, seed=trial)
        fitness = lambda e: ev.fresh_quality(WEAK, nir.with_embedding(e, "c"))
        rng = np.random.default_rng(trial)
        _, pgpe_f, _ = pgpe_minimize(nir.embedding, fitness, 30, rng, n_samples=4)
        random_f = min(fitness(nir.embedding + rng.standard_normal(nir.embedding.size))
                       for _ in range(30))
        wins += pgpe_f < random_f
    assert wins >= 7
