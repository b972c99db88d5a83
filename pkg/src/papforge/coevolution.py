"""Co-evolution of a configuration portfolio and an instance population.

One round = PAP evolution (mine ``n`` complementary configs, then pick the
best K-subset of everything seen) followed, except in the last round, by
instance evolution (mutate pool members into instances the portfolio
handles worse than every current member). Every phase is checkpointed to the
run directory, and all randomness is derived from the master seed per phase,
so a resumed run continues exactly as an uninterrupted one would.
"""

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .aac import AacBudget, search_configuration
from .brkga import sample_config
from .nir import (NirHyper, NirInstance, hyper_to_dict, load_nir_checkpoint,
                  sample_training_data, save_nir_checkpoint, train_nirs)
from .pgpe import DEFAULT_SAMPLES, mutate_instance
from .portfolio import (DEFAULT_BUDGET, DEFAULT_REPS, NIR_BOUND_SAMPLES, REAL_BOUND_SAMPLES,
                        Evaluator, PerfCache, Portfolio, greedy_initialize,
                        portfolio_performance)
from .problems import instance_from_spec
from .seeding import DEFAULT_SEED, derive_seed, substream


@dataclass
class DaceRunConfig:
    K: int = 4
    max_round: int = 4
    n_mining: int = 20
    n_init_configs: int = 50
    budget: int = DEFAULT_BUDGET
    reps: int = DEFAULT_REPS
    aac: AacBudget = field(default_factory=AacBudget)
    mutation_max_iter: int = 200
    pgpe_samples: int = DEFAULT_SAMPLES
    nir_bound_samples: int = NIR_BOUND_SAMPLES
    real_bound_samples: int = REAL_BOUND_SAMPLES
    nir_train_samples: int = 20_000
    nir: NirHyper = field(default_factory=NirHyper)
    seed: int = DEFAULT_SEED
    workers: int = 1

    def __post_init__(self):
        if self.K < 1 or self.n_mining < 1 or self.max_round < 1:
            raise ValueError("K, n_mining and max_round must all be >= 1")
        if self.n_init_configs < self.K:
            raise ValueError("n_init_configs must be >= K")

    def to_dict(self):
        out = asdict(self)
        out["nir"] = hyper_to_dict(self.nir)
        return out


@dataclass
class InstancePool:
    """Instances with their current best-of-portfolio quality ``f``; fitness is ``-f``."""

    instances: list
    f: list = None

    def __post_init__(self):
        if not self.instances:
            raise ValueError("an instance pool needs at least one member")

    def __len__(self):
        return len(self.instances)

    @property
    def fitness(self):
        return [-v for v in self.f]

    def refresh(self, portfolio, evaluator):
        self.f = [evaluator.portfolio_quality(portfolio, m) for m in self.instances]
        return self


# ---------------------------------------------------------------- PAP evolution


@dataclass
class Combination:
    portfolio: Portfolio
    objective: float
    visited: int


def best_combination(Q, K, keys=None):
    """Best K-subset of the rows of ``Q`` by summed column-wise max.

    All C(rows, K) subsets are scored. When ``keys`` is given, subsets with
    repeated keys are skipped unless no subset has K distinct keys. Ties go to
    the lexicographically first subset. Returns ``(indices, objective, visited)``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    n = Q.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"cannot choose K={K} of {n} candidates")
    combos = np.array(list(itertools.combinations(range(n), K)), dtype=np.int64)
    scores = np.empty(len(combos))
    for lo in range(0, len(combos), 50_000):
        part = combos[lo:lo + 50_000]
        scores[lo:lo + 50_000] = Q[part].max(axis=1).sum(axis=1)
    allowed = np.ones(len(combos), dtype=bool)
    if keys is not None:
        _, key_ids = np.unique(np.asarray(keys), return_inverse=True)
        ids = np.sort(key_ids[combos], axis=1)
        allowed = np.all(ids[:, 1:] != ids[:, :-1], axis=1) if K > 1 else allowed
        if not allowed.any():
            allowed[:] = True
    masked = np.where(allowed, scores, -np.inf)
    best = int(np.argmax(masked))
    return tuple(int(i) for i in combos[best]), float(scores[best]), len(combos)


def cached_matrix(configs, instances, cache):
    Q = np.empty((len(configs), len(instances)))
    for i, c in enumerate(configs):
        for j, m in enumerate(instances):
            v = cache.get(c, m.id)
            if v is None:
                raise KeyError(f"no cached quality for {c.key} on {m.id}")
            Q[i, j] = v
    return Q


def select_best_combination(psi, instances, K, cache):
    """Pure cache lookups; see :func:`best_combination`."""
    psi = list(psi)
    idx, obj, visited = best_combination(cached_matrix(psi, instances, cache), K,
                                         [c.key for c in psi])
    members = tuple(psi[i] for i in idx)
    allow = len({c.key for c in members}) < len(members)
    return Combination(Portfolio(members, allow_repeats=allow), obj, visited)


def pap_objective(portfolio, instances, evaluator):
    return float(sum(evaluator.portfolio_quality(portfolio, m) for m in instances))


def evolve_pap(P, instances, cfg, evaluator, round_no, log=None):
    """Mine ``cfg.n_mining`` configurations and return the best K of ``P`` plus them."""
    K = len(P)
    psi = list(P)
    score_fn = lambda c: evaluator.matrix([c], instances)[0]
    for i in range(1, cfg.n_mining + 1):
        j = i % K
        partial = [c for idx, c in enumerate(P) if idx != j]
        rng = substream(cfg.seed, "aac", round_no, i)
        theta = search_configuration(partial, instances, cfg.aac, score_fn, rng)
        psi.append(theta)
        if log:
            log({"event": "mined", "round": round_no, "i": i, "removed": j,
                 "config": theta.to_list()})
    evaluator.matrix(psi, instances)
    before = pap_objective(P, instances, evaluator)
    combo = select_best_combination(psi, instances, K, evaluator.cache)
    if log:
        log({"event": "pap_evolved", "round": round_no, "objective_before": before,
             "objective_after": combo.objective, "subsets": combo.visited,
             "psi_size": len(psi), "members": combo.portfolio.to_json()})
    return combo.portfolio


# ---------------------------------------------------------------- instance evolution


def is_challenging(f_candidate, P, instances, cache):
    """True iff ``P`` does strictly worse on the candidate than on every instance."""
    if not instances:
        raise ValueError("challenge test needs a non-empty instance set")
    worst = min(portfolio_performance(cache.get(c, m.id) for c in P) for m in instances)
    return f_candidate < worst


def evolve_instances(P, pool, evaluator, mutate_fn, rng, round_no, log=None):
    """One instance-mining pass; returns the pool ``M_new + M'``.

    ``mutate_fn(instance, parent_f, rng, new_id) -> (instance', f')``.
    Mining stops at the first mutant that is not challenging for ``P``
    relative to the working pool; otherwise a random working member with
    higher ``f`` than the mutant is dropped from the working pool.
    """
    pristine = list(zip(pool.instances, pool.f))
    working = list(pristine)
    new = []
    for k in range(len(pristine) // 2):
        m, f_m = pristine[int(rng.integers(len(pristine)))]
        m2, f2 = mutate_fn(m, f_m, rng, f"{m.id.split('~')[0]}~r{round_no}k{k}")
        f2 = f_m if m2 is m else evaluator.portfolio_quality(P, m2)
        challenging = is_challenging(f2, P, [x for x, _ in working], evaluator.cache)
        if log:
            log({"event": "mutant", "round": round_no, "k": k, "parent": m.id, "id": m2.id,
                 "f_parent": f_m, "f": f2, "challenging": challenging})
        if not challenging:
            break
        weaker = [i for i, (_, fx) in enumerate(working) if fx > f2]
        removed = working.pop(weaker[int(rng.integers(len(weaker)))])
        new.append((m2, f2))
        if log:
            log({"event": "replaced", "round": round_no, "removed": removed[0].id,
                 "added": m2.id})
    merged = new + pristine
    return InstancePool([m for m, _ in merged], [f for _, f in merged])


def nir_mutator(P, evaluator, cfg):
    def mutate(m, parent_f, rng, new_id):
        return mutate_instance(m, P, evaluator, parent_f, cfg.mutation_max_iter, rng,
                               cfg.pgpe_samples, new_id=new_id)
    return mutate


def domain_mutator(domain_mutate):
    def mutate(m, parent_f, rng, new_id):
        return domain_mutate(m, rng), None
    return mutate


# ---------------------------------------------------------------- run directory


class RunDir:
    """Checkpoint files of one run; ``None`` path keeps everything in memory."""

    def __init__(self, path, sink=None):
        self.path = None if path is None else Path(path)
        self.sink = sink
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)

    def log(self, event):
        if self.path is not None:
            with open(self.path / "log.jsonl", "a") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        if self.sink:
            self.sink(event)

    def state(self):
        if self.path is None or not (self.path / "state.json").exists():
            return {"completed": [], "done": False}
        return json.loads((self.path / "state.json").read_text())

    def write_json(self, rel, obj):
        if self.path is None:
            return
        target = self.path / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
        tmp.replace(target)

    def read_json(self, rel):
        return json.loads((self.path / rel).read_text())

    def save_cache(self, cache):
        if self.path is not None:
            tmp = self.path / "cache.json.tmp"
            cache.save(tmp)
            tmp.replace(self.path / "cache.json")

    def mark(self, phase, done=False):
        st = self.state()
        st["completed"].append(phase)
        st["done"] = done
        self.write_json("state.json", st)

    def save_pool(self, rel, pool):
        if self.path is None:
            return
        d = self.path / rel
        d.mkdir(parents=True, exist_ok=True)
        members = []
        for m, f in zip(pool.instances, pool.f):
            if isinstance(m, NirInstance):
                np.asarray(m.embedding, dtype="<f4").tofile(d / f"{m.id}.f32")
                members.append({"id": m.id, "kind": "nir", "f": f})
            else:
                members.append({"id": m.id, "kind": "instance", "spec": m.spec(), "f": f})
        self.write_json(f"{rel}/pool.json", {"members": members})

    def load_pool(self, rel, shared=None):
        d = self.path / rel
        instances, f = [], []
        for e in self.read_json(f"{rel}/pool.json")["members"]:
            if e["kind"] == "nir":
                emb = np.fromfile(d / f"{e['id']}.f32", dtype="<f4")
                instances.append(NirInstance(shared, emb, e["id"]))
            else:
                instances.append(instance_from_spec(e["spec"]))
            f.append(e["f"])
        return InstancePool(instances, f)


def save_pap(run, round_no, P, pool):
    run.write_json(f"round_{round_no}/pap.json", {
        "round": round_no,
        "members": P.to_json(),
        "objective": float(sum(pool.f)),
        "qualities": {m.id: f for m, f in zip(pool.instances, pool.f)},
    })


# ---------------------------------------------------------------- driver


def _phases(max_round):
    out = ["init"]
    for r in range(1, max_round + 1):
        out.append(f"pap-{r}")
        if r < max_round:
            out.append(f"instances-{r}")
    return out


def _train_pool_nirs(training_instances, cfg, run):
    if run.path is not None and (run.path / "nir" / "manifest.json").exists():
        shared, emb, _ = load_nir_checkpoint(run.path / "nir")
        return shared, emb
    datasets = [sample_training_data(m, cfg.nir_train_samples, derive_seed(cfg.seed, "nir-data", i),
                                     budget=cfg.budget)
                for i, m in enumerate(training_instances)]
    hyper = NirHyper(**{**asdict(cfg.nir), "seed": derive_seed(cfg.seed, "nir-train")})
    shared, E, report = train_nirs(
        datasets, hyper,
        log=lambda e: run.log({"event": "nir_epoch", **e}))
    emb = {f"nir-{i:03d}": E[i] for i in range(len(training_instances))}
    if run.path is not None:
        save_nir_checkpoint(run.path / "nir", shared, emb, meta={
            "sources": [m.id for m in training_instances],
            "y_range": [[d.y_min, d.y_max] for d in datasets],
            "best_epoch": report.best_epoch, "epochs": len(report.history) - 1,
            "final_valid_pred": report.final["valid_pred"],
            "final_valid_recon": report.final["valid_recon"]})
    run.log({"event": "nir_trained", "best_epoch": report.best_epoch})
    return shared, emb


def coevolve(initial_instances, cfg, mutate_factory, run_dir=None, sink=None, shared=None,
             stop_after=None):
    """Shared driver for DACE (NIR pool) and the CEPS baseline (real pool).

    ``stop_after`` names a phase (``init``, ``pap-2``, ``instances-1``...) after
    which to return early, leaving a resumable run directory.
    """
    run = RunDir(run_dir, sink)
    run.write_json("config.json", cfg.to_dict())
    cache = PerfCache.load(run.path / "cache.json") if (
        run.path is not None and (run.path / "cache.json").exists()) else PerfCache()
    evaluator = Evaluator(cache, cfg.budget, cfg.reps, cfg.seed, cfg.nir_bound_samples,
                          cfg.real_bound_samples, cfg.workers)
    done = run.state()["completed"]
    P = pool = None
    last_pap = last_pool = None
    for phase in done:
        kind, _, r = phase.partition("-")
        if phase == "init":
            last_pap = last_pool = 0
        elif kind == "pap":
            last_pap = int(r)
        elif kind == "instances":
            last_pool = int(r)
    if last_pap is not None:
        P = Portfolio.from_json(run.read_json(f"round_{last_pap}/pap.json")["members"])
        pool = run.load_pool(f"round_{last_pool}/pool", shared).refresh(P, evaluator)

    phases = _phases(cfg.max_round)
    for phase in phases:
        if phase in done:
            continue
        t0 = time.time()
        if phase == "init":
            pool = InstancePool(list(initial_instances))
            rng = substream(cfg.seed, "init-configs")
            configs, seen = [], set()
            while len(configs) < cfg.n_init_configs:
                c = sample_config(rng)
                if c.key not in seen:
                    seen.add(c.key)
                    configs.append(c)
            Q = evaluator.matrix(configs, pool.instances)
            P = greedy_initialize(configs, pool.instances, cfg.K, Q)
            P = Portfolio(P.members)
            pool.refresh(P, evaluator)
            save_pap(run, 0, P, pool)
            run.save_pool("round_0/pool", pool)
        else:
            kind, _, r = phase.partition("-")
            r = int(r)
            if kind == "pap":
                P = evolve_pap(P, pool.instances, cfg, evaluator, r, run.log)
                pool.refresh(P, evaluator)
                save_pap(run, r, P, pool)
            else:
                rng = substream(cfg.seed, "pool", r)
                pool = evolve_instances(P, pool, evaluator, mutate_factory(P, evaluator, cfg),
                                        rng, r, run.log)
                run.save_pool(f"round_{r}/pool", pool)
        run.save_cache(evaluator.cache)
        run.mark(phase, done=phase == phases[-1])
        run.log({"event": "phase", "phase": phase, "seconds": round(time.time() - t0, 3),
                 "pool_size": len(pool), "objective": float(sum(pool.f)),
                 "solver_runs": evaluator.solver_runs})
        if phase == stop_after:
            break
    return P, pool, evaluator


def run_dace(training_instances, cfg, run_dir=None, sink=None, nirs=None, stop_after=None):
    """Train NIRs on ``training_instances`` (unless ``nirs=(shared, embeddings)``
    is given) and co-evolve a portfolio against them."""
    run = RunDir(run_dir, sink)
    shared, emb = nirs if nirs is not None else _train_pool_nirs(training_instances, cfg, run)
    pool = [NirInstance(shared, emb[k], k) for k in sorted(emb)]
    P, _, _ = coevolve(pool, cfg, nir_mutator, run_dir, sink, shared=shared,
                       stop_after=stop_after)
    return P


def run_ceps_baseline(training_instances, cfg, domain_mutate, run_dir=None, sink=None,
                      stop_after=None):
    """Same driver on real instances with a domain-specific mutation."""
    P, _, _ = coevolve(list(training_instances), cfg,
                       lambda P, ev, c: domain_mutator(domain_mutate), run_dir, sink,
                       stop_after=stop_after)
    return P


def mining_removal_sequence(n, K):
    return [i % K for i in range(1, n + 1)]


def subset_count(n, K):
    return math.comb(n, K)
