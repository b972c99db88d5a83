import itertools
import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from papforge.aac import AacBudget
from papforge.brkga import SolverConfig
from papforge.coevolution import (DaceRunConfig, InstancePool, best_combination, coevolve,
                                  domain_mutator, evolve_instances, evolve_pap,
                                  is_challenging, mining_removal_sequence, run_ceps_baseline,
                                  run_dace, select_best_combination, subset_count)
from papforge.portfolio import Evaluator, PerfCache, Portfolio, portfolio_performance
from papforge.problems import OneMaxInstance, ccp_make_instance, random_onemax

from conftest import toy_shared

CONFIGS = [SolverConfig(i + 1, 10, 10, 0.5, False) for i in range(30)]


def brute_force(Q, K):
    """Independent enumeration: best summed column max, first subset wins ties."""
    best, best_val = None, None
    for subset in itertools.combinations(range(len(Q)), K):
        val = sum(max(Q[i][j] for i in subset) for j in range(len(Q[0])))
        if best_val is None or val > best_val:
            best, best_val = subset, val
    return best, best_val


@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6),
       st.booleans())
def test_best_combination_matches_brute_force(n, m, K, seed, integer):
    K = min(K, n)
    rng = np.random.default_rng(seed)
    Q = rng.integers(0, 3, size=(n, m)).astype(float) if integer else rng.random((n, m))
    idx, obj, visited = best_combination(Q, K)
    ref_idx, ref_obj = brute_force(Q.tolist(), K)
    assert idx == ref_idx and obj == pytest.approx(ref_obj, abs=1e-12)
    assert visited == math.comb(n, K)


def test_enumeration_count_24_choose_4():
    _, _, visited = best_combination(np.random.default_rng(0).random((24, 5)), 4)
    assert visited == 10626 == subset_count(24, 4)


def test_full_set_when_K_equals_candidates():
    Q = np.random.default_rng(1).random((5, 3))
    idx, obj, visited = best_combination(Q, 5)
    assert idx == (0, 1, 2, 3, 4) and visited == 1
    assert obj == pytest.approx(Q.max(axis=0).sum())


def test_duplicate_keys_skipped_when_possible():
    # the two copies of row 0 would otherwise win together
    Q = np.array([[1.0, 1.0], [1.0, 1.0], [0.2, 0.1]])
    idx, _, _ = best_combination(Q, 2, keys=["a", "a", "b"])
    assert idx == (0, 2)
    idx, _, _ = best_combination(Q[:2], 2, keys=["a", "a"])
    assert idx == (0, 1)


def cache_from(Q, configs, ids):
    cache = PerfCache()
    for i, c in enumerate(configs):
        for j, mid in enumerate(ids):
            cache.put(c, mid, Q[i][j], 1)
    return cache


def test_select_best_combination_uses_cache_only():
    Q = np.random.default_rng(2).random((6, 3))
    insts = [SimpleNamespace(id=f"m{j}") for j in range(3)]
    cache = cache_from(Q, CONFIGS[:6], [m.id for m in insts])
    combo = select_best_combination(CONFIGS[:6], insts, 2, cache)
    ref_idx, ref_obj = brute_force(Q.tolist(), 2)
    assert combo.portfolio.members == tuple(CONFIGS[i] for i in ref_idx)
    assert combo.objective == pytest.approx(ref_obj)
    with pytest.raises(KeyError):
        select_best_combination(CONFIGS[:7], insts, 2, cache)


def test_removal_sequence():
    assert mining_removal_sequence(5, 4) == [1, 2, 3, 0, 1]


def test_is_challenging_examples():
    P = Portfolio(tuple(CONFIGS[:2]))
    insts = [SimpleNamespace(id="a"), SimpleNamespace(id="b")]
    cache = cache_from([[0.5, 0.9], [0.7, 0.3]], CONFIGS[:2], ["a", "b"])
    low = min(portfolio_performance(cache.get(c, m.id) for c in P) for m in insts)
    assert low == 0.7
    assert is_challenging(low - 0.01, P, insts, cache)
    assert not is_challenging(low, P, insts, cache)
    assert not is_challenging(low + 0.01, P, insts, cache)
    with pytest.raises(ValueError):
        is_challenging(0.0, P, [], cache)


class TableEvaluator:
    """Cache-backed stand-in: each instance's quality is written when it is created."""

    def __init__(self, P):
        self.cache = PerfCache()
        self.P = P

    def add(self, id, f):
        inst = SimpleNamespace(id=id)
        for c in self.P:
            self.cache.put(c, id, f, 1)
        return inst

    def portfolio_quality(self, P, m):
        return portfolio_performance(self.cache.get(c, m.id) for c in P)


def table_pool(ev, fs):
    insts = [ev.add(f"m{i}", f) for i, f in enumerate(fs)]
    return InstancePool(insts, list(fs))


def test_identity_mutation_never_grows_pool():
    P = Portfolio(tuple(CONFIGS[:2]))
    ev = TableEvaluator(P)
    pool = table_pool(ev, [0.4, 0.6, 0.8, 0.5])
    out = evolve_instances(P, pool, ev, lambda m, f, rng, nid: (m, f),
                           np.random.default_rng(0), 1)
    assert [m.id for m in out.instances] == [m.id for m in pool.instances]


@given(st.integers(1, 12), st.integers(0, 10_000))
def test_always_harder_mutants_fill_half(n, seed):
    P = Portfolio(tuple(CONFIGS[:2]))
    ev = TableEvaluator(P)
    pool = table_pool(ev, list(np.random.default_rng(seed).random(n)))
    counter = iter(range(10**6))

    def harder(m, f, rng, nid):
        return ev.add(nid, -1.0 - next(counter)), None

    log = []
    out = evolve_instances(P, pool, ev, harder, np.random.default_rng(seed), 1, log.append)
    assert len(out) == n + n // 2 <= math.floor(3 * n / 2)
    assert [m.id for m in out.instances[n // 2:]] == [m.id for m in pool.instances]
    removed = [e for e in log if e["event"] == "replaced"]
    assert len(removed) == n // 2 and len({e["removed"] for e in removed}) == n // 2


def test_first_mutant_not_challenging_stops():
    P = Portfolio(tuple(CONFIGS[:2]))
    ev = TableEvaluator(P)
    pool = table_pool(ev, [0.4, 0.6, 0.8, 0.5])
    calls = []

    def easy(m, f, rng, nid):
        calls.append(nid)
        return ev.add(nid, 0.4), None

    out = evolve_instances(P, pool, ev, easy, np.random.default_rng(0), 1)
    assert len(calls) == 1 and len(out) == 4


def test_new_members_beat_a_removed_member():
    P = Portfolio(tuple(CONFIGS[:2]))
    ev = TableEvaluator(P)
    fs = [0.3, 0.9, 0.6, 0.7, 0.5, 0.8]
    pool = table_pool(ev, fs)
    quality = iter([0.2, 0.1, 0.95])

    def mutate(m, f, rng, nid):
        return ev.add(nid, next(quality)), None

    log = []
    out = evolve_instances(P, pool, ev, mutate, np.random.default_rng(3), 1, log.append)
    f_of = dict(zip([m.id for m in pool.instances], fs))
    mutants = {e["id"]: e["f"] for e in log if e["event"] == "mutant"}
    for e in log:
        if e["event"] == "replaced":
            assert mutants[e["added"]] < f_of[e["removed"]]
    # the third mutant is easier than every working member, so mining stops
    assert len(out) == 8


def tiny_cfg(**kw):
    base = dict(K=2, max_round=2, n_mining=2, n_init_configs=4, budget=100, reps=1,
                aac=AacBudget(3, 1), mutation_max_iter=1, pgpe_samples=2,
                nir_bound_samples=400, real_bound_samples=300, seed=5)
    base.update(kw)
    return DaceRunConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_cfg(K=0)
    with pytest.raises(ValueError):
        tiny_cfg(n_init_configs=1)


def test_evolve_pap_monotone_on_real_instances():
    rng = np.random.default_rng(0)
    insts = [random_onemax(10, rng, id=f"o{i}") for i in range(3)]
    cfg = tiny_cfg(K=2, n_mining=3, budget=60)
    ev = Evaluator(budget=60, reps=1, real_samples=200)
    P = Portfolio((SolverConfig(2, 10, 2, 0.5, False), SolverConfig(3, 10, 2, 0.5, True)))
    log = []
    new = evolve_pap(P, insts, cfg, ev, 1, log.append)
    after = sum(ev.portfolio_quality(new, m) for m in insts)
    before = sum(ev.portfolio_quality(P, m) for m in insts)
    assert after >= before and len(new) == 2
    mined = [e for e in log if e["event"] == "mined"]
    assert [e["removed"] for e in mined] == [1, 0, 1]
    assert log[-1]["psi_size"] == 5 and log[-1]["subsets"] == 10


def ccp_train(n=3, d=6):
    return [ccp_make_instance(d, 1e-4, T=10, seed=s, id=f"ccp-{s}") for s in range(n)]


def test_single_round_has_no_instance_phase(tmp_path):
    identity = lambda m, rng: m
    run_ceps_baseline(ccp_train(), tiny_cfg(max_round=1), identity, tmp_path / "r")
    state = json.loads((tmp_path / "r" / "state.json").read_text())
    assert state == {"completed": ["init", "pap-1"], "done": True}
    events = [json.loads(l)["event"] for l in open(tmp_path / "r" / "log.jsonl")]
    assert events.count("pap_evolved") == 1 and "mutant" not in events


def test_ceps_identity_pool_never_grows(tmp_path):
    P = run_ceps_baseline(ccp_train(), tiny_cfg(max_round=3), lambda m, rng: m, tmp_path / "r")
    assert len(P) == 2
    for r in (0, 1, 2):
        pool = json.loads((tmp_path / "r" / f"round_{r}" / "pool" / "pool.json").read_text())
        assert len(pool["members"]) == 3


def test_ceps_with_domain_mutation_keeps_pool_bounded(tmp_path):
    from papforge.problems import ccp_domain_mutate
    P = run_ceps_baseline(ccp_train(4), tiny_cfg(max_round=2), ccp_domain_mutate,
                          tmp_path / "r")
    pool = json.loads((tmp_path / "r" / "round_1" / "pool" / "pool.json").read_text())
    assert 4 <= len(pool["members"]) <= 6
    assert len({c.key for c in P}) == 2


def _files(run):
    return {name: (run / name).read_bytes()
            for name in ("cache.json", "round_2/pap.json", "round_1/pool/pool.json")}


@pytest.mark.parametrize("stop", ["init", "pap-1", "instances-1"])
def test_resume_matches_uninterrupted_ceps(tmp_path, stop):
    from papforge.problems import ccp_domain_mutate
    cfg = tiny_cfg()
    run_ceps_baseline(ccp_train(4), cfg, ccp_domain_mutate, tmp_path / "full")
    run_ceps_baseline(ccp_train(4), cfg, ccp_domain_mutate, tmp_path / "split", stop_after=stop)
    assert not json.loads((tmp_path / "split" / "state.json").read_text())["done"]
    run_ceps_baseline(ccp_train(4), cfg, ccp_domain_mutate, tmp_path / "split")
    assert _files(tmp_path / "full") == _files(tmp_path / "split")


def test_dace_with_given_nirs_and_resume(tmp_path):
    s = toy_shared(6, seed=1)
    rng = np.random.default_rng(0)
    emb = {f"nir-{i:03d}": rng.normal(size=s.d_embed) for i in range(4)}
    cfg = tiny_cfg()
    P = run_dace(None, cfg, tmp_path / "full", nirs=(s, emb))
    run_dace(None, cfg, tmp_path / "split", nirs=(s, emb), stop_after="instances-1")
    P2 = run_dace(None, cfg, tmp_path / "split", nirs=(s, emb))
    assert P == P2 and len(P) == 2
    assert _files(tmp_path / "full") == _files(tmp_path / "split")
    events = [json.loads(l) for l in open(tmp_path / "full" / "log.jsonl")]
    for e in events:
        if e["event"] == "pap_evolved":
            assert e["objective_after"] >= e["objective_before"] - 1e-12
