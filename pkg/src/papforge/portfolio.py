"""Portfolios of solver configurations and their cached evaluation."""

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .brkga import SolverConfig, brkga_run
from .seeding import derive_seed

DEFAULT_BUDGET = 800
DEFAULT_REPS = 3
NIR_BOUND_SAMPLES = 100_000
REAL_BOUND_SAMPLES = 50_000
PAPER_NIR_BOUND_SAMPLES = 10_000_000
PAPER_REAL_BOUND_SAMPLES = 1_000_000


class DegenerateInstanceError(ValueError):
    """Sampled objective range is empty, so normalized quality is undefined."""


@dataclass(frozen=True)
class Portfolio:
    members: tuple
    allow_repeats: bool = False

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("a portfolio needs at least one member")
        if not self.allow_repeats and len({m.key for m in members}) != len(members):
            raise ValueError("portfolio members must be distinct")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def to_json(self):
        return [m.to_list() for m in self.members]

    @classmethod
    def from_json(cls, rows, allow_repeats=False):
        return cls(tuple(SolverConfig.from_list(r) for r in rows), allow_repeats)


def portfolio_performance(per_member):
    values = list(per_member)
    if not values:
        raise ValueError("portfolio performance of an empty portfolio")
    return max(values)


@dataclass(frozen=True)
class NormBounds:
    f_min: float
    f_max: float
    sample_count: int

    def __post_init__(self):
        if self.f_max < self.f_min:
            raise ValueError("f_max must be >= f_min")


def normalized_quality(raw, bounds):
    span = bounds.f_max - bounds.f_min
    if span <= 0:
        raise DegenerateInstanceError("f_max == f_min: the instance carries no signal")
    return (raw - bounds.f_min) / span


def compute_norm_bounds(instance, n_samples, seed, chunk=65_536):
    """Min and max objective over ``n_samples`` uniform random bit strings."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    left = n_samples
    while left > 0:
        size = min(chunk, left)
        y = instance.evaluate_batch(rng.integers(0, 2, size=(size, instance.dim), dtype=np.int8))
        lo, hi = min(lo, float(y.min())), max(hi, float(y.max()))
        left -= size
    return NormBounds(lo, hi, n_samples)


class PerfCache:
    """``(config key, instance id) -> normalized quality``; entries are write-once."""

    def __init__(self):
        self._entries = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(config_key, instance_id):
        return f"{config_key}|{instance_id}"

    def get(self, config, instance_id):
        entry = self._entries.get(self._key(config.key, instance_id))
        return None if entry is None else entry["quality"]

    def __contains__(self, pair):
        config, instance_id = pair
        return self._key(config.key, instance_id) in self._entries

    def put(self, config, instance_id, quality, reps):
        key = self._key(config.key, instance_id)
        with self._lock:
            self._entries.setdefault(key, {"quality": float(quality), "reps": int(reps)})
            return self._entries[key]["quality"]

    def __len__(self):
        return len(self._entries)

    def to_dict(self):
        return {"entries": {k: self._entries[k] for k in sorted(self._entries)}}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        cache = cls()
        with open(path) as fh:
            cache._entries = dict(json.load(fh)["entries"])
        return cache


def _solver_seed(seed, config, rep):
    # common random numbers: the same config uses the same streams on every instance
    return derive_seed(seed, "brkga", config.key, rep)


def mean_best(config, instance, budget, reps, seed):
    """Mean raw best value over ``reps`` seeded BRKGA runs."""
    values = [brkga_run(config, instance, budget, _solver_seed(seed, config, r),
                        allow_partial=True).best_y for r in range(reps)]
    return float(np.mean(values))


def evaluate_config_on_instance(config, instance, bounds, cache=None, budget=DEFAULT_BUDGET,
                                reps=DEFAULT_REPS, seed=0):
    """Normalized mean best quality of ``config`` on ``instance``, memoized in ``cache``."""
    if cache is not None:
        hit = cache.get(config, instance.id)
        if hit is not None:
            return hit
    q = normalized_quality(mean_best(config, instance, budget, reps, seed), bounds)
    if cache is not None:
        q = cache.put(config, instance.id, q, reps)
    return q


class Evaluator:
    """Owns the cache, normalization bounds and solver protocol for one run."""

    def __init__(self, cache=None, budget=DEFAULT_BUDGET, reps=DEFAULT_REPS, seed=0,
                 nir_samples=NIR_BOUND_SAMPLES, real_samples=REAL_BOUND_SAMPLES, workers=1):
        self.cache = PerfCache() if cache is None else cache
        self.budget = budget
        self.reps = reps
        self.seed = seed
        self.nir_samples = nir_samples
        self.real_samples = real_samples
        self.workers = max(1, int(workers))
        self.solver_runs = 0
        self._bounds = {}
        self._lock = threading.Lock()

    def bounds(self, instance, fresh=False):
        if not fresh and instance.id in self._bounds:
            return self._bounds[instance.id]
        n = self.nir_samples if instance.surrogate else self.real_samples
        b = compute_norm_bounds(instance, n, derive_seed(self.seed, "bounds", instance.dim))
        if not fresh:
            with self._lock:
                self._bounds.setdefault(instance.id, b)
        return b

    def _run(self, config, instance, bounds):
        with self._lock:
            self.solver_runs += self.reps
        return normalized_quality(mean_best(config, instance, self.budget, self.reps, self.seed),
                                  bounds)

    def quality(self, config, instance):
        hit = self.cache.get(config, instance.id)
        if hit is not None:
            return hit
        q = self._run(config, instance, self.bounds(instance))
        return self.cache.put(config, instance.id, q, self.reps)

    def fresh_quality(self, portfolio, instance):
        """Best-of-portfolio quality with fresh bounds and no caching."""
        bounds = self.bounds(instance, fresh=True)
        return portfolio_performance(self._run(c, instance, bounds) for c in portfolio)

    def portfolio_quality(self, portfolio, instance):
        return portfolio_performance(self.quality(c, instance) for c in portfolio)

    def matrix(self, configs, instances):
        """Quality matrix of shape ``(len(configs), len(instances))``."""
        for m in instances:
            self.bounds(m)
        pairs = [(c, m) for c in configs for m in instances]
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                values = list(pool.map(lambda p: self.quality(*p), pairs))
        else:
            values = [self.quality(c, m) for c, m in pairs]
        return np.array(values, dtype=np.float64).reshape(len(configs), len(instances))


def greedy_initialize(configs, instances, K, quality):
    """Add, K times, the config with the largest gain in summed best-of quality.

    ``quality`` is a ``(config, instance) -> float`` callable or a precomputed
    ``(len(configs), len(instances))`` matrix. Ties go to the lowest index.
    """
    configs = list(configs)
    if len(configs) < K:
        raise ValueError(f"need at least K={K} candidate configurations, got {len(configs)}")
    if isinstance(quality, np.ndarray):
        Q = quality
    else:
        Q = np.array([[quality(c, m) for m in instances] for c in configs], dtype=np.float64)
    chosen = []
    current = np.full(Q.shape[1], -np.inf)
    for _ in range(K):
        gains = np.maximum(Q, current).sum(axis=1)
        gains[chosen] = -np.inf
        pick = int(np.argmax(gains))
        chosen.append(pick)
        current = np.maximum(current, Q[pick])
    return Portfolio(tuple(configs[i] for i in chosen), allow_repeats=True)


def baseline_brkga_pap():
    """The four hand-picked BRKGA configurations used as a reference portfolio."""
    return Portfolio((
        SolverConfig(20, 70, 10, 0.7, False),
        SolverConfig(20, 70, 10, 0.7, True),
        SolverConfig(15, 75, 10, 0.7, False),
        SolverConfig(15, 75, 10, 0.7, True),
    ))



def protocol_quality(portfolio, instance, bounds, runs=20, budget=DEFAULT_BUDGET, seed=0):
    """Test protocol: mean over ``runs`` independent applications of the
    portfolio of its best normalized member result."""
    per_run = []
    for r in range(runs):
        best = max(brkga_run(c, instance, budget, derive_seed(seed, "test", c.key, r),
                             allow_partial=True).best_y for c in portfolio)
        per_run.append(normalized_quality(best, bounds))
    return float(np.mean(per_run))
