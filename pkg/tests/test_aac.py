import numpy as np
import pytest
from hypothesis import given, strategies as st

from papforge.aac import AacBudget, perturb_config, search_configuration
from papforge.brkga import PARAM_NAMES, PARAM_RANGES, SolverConfig, sample_config
from papforge.portfolio import Evaluator
from papforge.problems import ccp_make_instance


def elite_bias_landscape(c):
    return np.array([c.elite_bias])


def test_budget_validation():
    with pytest.raises(ValueError):
        AacBudget(0)
    with pytest.raises(ValueError):
        AacBudget(5, 0)


@given(st.integers(0, 100_000))
def test_perturb_changes_at_most_one_field_within_range(seed):
    rng = np.random.default_rng(seed)
    c = sample_config(rng)
    p = perturb_config(c, rng)
    diff = [n for n in PARAM_NAMES if getattr(c, n) != getattr(p, n)]
    assert len(diff) <= 1
    for name, (lo, hi) in PARAM_RANGES.items():
        assert lo <= getattr(p, name) <= hi


def test_perturb_reproducible():
    c = SolverConfig(20, 70, 10, 0.7, False)
    assert perturb_config(c, np.random.default_rng(3)) == perturb_config(c, np.random.default_rng(3))


def test_single_trial_is_one_random_sample():
    trace = []
    best = search_configuration([], ["m"], AacBudget(1), elite_bias_landscape,
                                np.random.default_rng(4), trace)
    assert len(trace) == 1 and best == sample_config(np.random.default_rng(4))


@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 5))
def test_incumbent_rule(seed, trials, restarts):
    trace = []
    best = search_configuration([], ["m"], AacBudget(trials, restarts), elite_bias_landscape,
                                np.random.default_rng(seed), trace)
    assert len(trace) == trials
    objs = [t[1] for t in trace]
    incumbents = [t[2] for t in trace]
    assert best.elite_bias == max(objs) == incumbents[-1]
    assert np.all(np.diff(incumbents) >= 0)


def test_partial_portfolio_sets_the_floor():
    strong = SolverConfig(1, 1, 1, 0.95, False)
    trace = []
    search_configuration([strong], ["m"], AacBudget(5), elite_bias_landscape,
                         np.random.default_rng(0), trace)
    assert all(obj >= 0.95 for _, obj, _ in trace)


def test_planted_landscape_fixed_seed():
    best = search_configuration([], ["m"], AacBudget(64), elite_bias_landscape,
                                np.random.default_rng(42))
    assert best.elite_bias >= 0.9


def test_planted_landscape_success_rate():
    # about four in five seeds reach 0.9 with 64 trials
    hits = sum(search_configuration([], ["m"], AacBudget(64), elite_bias_landscape,
                                    np.random.default_rng(s)).elite_bias >= 0.9
               for s in range(200))
    assert hits >= 140


def test_solver_runs_bounded_and_no_empty_instances():
    insts = [ccp_make_instance(5, 1e-4, T=8, seed=s, id=f"c{s}") for s in range(2)]
    ev = Evaluator(budget=120, reps=2, real_samples=300)
    budget = AacBudget(6, 2)
    best = search_configuration([], insts, budget,
                                lambda c: ev.matrix([c], insts)[0], np.random.default_rng(0))
    assert isinstance(best, SolverConfig)
    assert ev.solver_runs <= budget.max_trials * len(insts) * ev.reps
    with pytest.raises(ValueError):
        search_configuration([], [], budget, elite_bias_landscape, np.random.default_rng(0))
