"""Biased random-key genetic algorithm for binary problems.

Keys live in ``[0, 1]^d`` and decode to bits by thresholding at 0.5. Each
generation keeps the elite, adds ``offspring_size`` biased crossovers between
an elite and a non-elite parent, and ``mutant_size`` fresh random keys.
"""

from dataclasses import dataclass, field

import numpy as np

PARAM_RANGES = {
    "elite_size": (1, 400),
    "offspring_size": (1, 1000),
    "mutant_size": (1, 200),
    "elite_bias": (0.0, 1.0),
    "eliminate_duplicates": (False, True),
}
PARAM_NAMES = tuple(PARAM_RANGES)


@dataclass(frozen=True)
class SolverConfig:
    elite_size: int
    offspring_size: int
    mutant_size: int
    elite_bias: float
    eliminate_duplicates: bool

    def __post_init__(self):
        for name in ("elite_size", "offspring_size", "mutant_size"):
            value = getattr(self, name)
            lo, hi = PARAM_RANGES[name]
            if isinstance(value, bool) or int(value) != value or not lo <= value <= hi:
                raise ValueError(f"{name}={value!r} outside [{lo}, {hi}]")
            object.__setattr__(self, name, int(value))
        if not 0.0 <= float(self.elite_bias) <= 1.0:
            raise ValueError(f"elite_bias={self.elite_bias!r} outside [0, 1]")
        object.__setattr__(self, "elite_bias", float(self.elite_bias))
        object.__setattr__(self, "eliminate_duplicates", bool(self.eliminate_duplicates))

    @property
    def population_size(self):
        return self.elite_size + self.offspring_size + self.mutant_size

    @property
    def key(self):
        """Value identity used as the performance-cache key."""
        return (f"{self.elite_size}-{self.offspring_size}-{self.mutant_size}-"
                f"{self.elite_bias!r}-{'T' if self.eliminate_duplicates else 'F'}")

    def to_list(self):
        return [self.elite_size, self.offspring_size, self.mutant_size,
                self.elite_bias, self.eliminate_duplicates]

    @classmethod
    def from_list(cls, values):
        return cls(*values)


@dataclass
class RunResult:
    best_x: np.ndarray
    best_y: float
    evals_used: int
    # best-so-far value after each generation
    trace: list = field(default_factory=list)
    # (X, y) batches in evaluation order, only when requested
    history: list = None


def decode_keys(keys):
    keys = np.asarray(keys, dtype=np.float64)
    if keys.size and (keys.min() < 0.0 or keys.max() > 1.0):
        raise ValueError("random keys must lie in [0, 1]")
    return (keys >= 0.5).astype(np.int8)


def sample_config(rng):
    return SolverConfig(
        elite_size=int(rng.integers(1, 401)),
        offspring_size=int(rng.integers(1, 1001)),
        mutant_size=int(rng.integers(1, 201)),
        elite_bias=float(rng.uniform(0.0, 1.0)),
        eliminate_duplicates=bool(rng.random() < 0.5),
    )


def _survive(keys, fit, unique):
    order = np.argsort(-fit, kind="stable")
    keys, fit = keys[order], fit[order]
    if unique and fit.size > 1:
        keep = np.concatenate(([True], fit[1:] != fit[:-1]))
        keys, fit = keys[keep], fit[keep]
    return keys, fit


def brkga_run(config, instance, budget, seed, allow_partial=False, record=False):
    """Run BRKGA on ``instance`` for at most ``budget`` objective evaluations.

    ``budget`` must cover one full population unless ``allow_partial`` is set,
    in which case an oversized initial population is cut to ``budget``
    random solutions. The final generation is truncated to fit the budget.
    """
    pop_size = config.population_size
    if budget < 1:
        raise ValueError("budget must be positive")
    if budget < pop_size:
        if not allow_partial:
            raise ValueError(f"budget {budget} is smaller than one generation ({pop_size})")
        pop_size = budget
    rng = np.random.default_rng(seed)
    d = instance.dim
    history = [] if record else None

    def evaluate(keys):
        X = decode_keys(keys)
        y = instance.evaluate_batch(X)
        if record:
            history.append((X, y))
        return y

    keys = rng.random((pop_size, d))
    fit = evaluate(keys)
    used = pop_size
    best = int(np.argmax(fit))
    best_x, best_y = decode_keys(keys[best]), float(fit[best])
    keys, fit = _survive(keys, fit, config.eliminate_duplicates)
    trace = [best_y]

    while used < budget:
        n = keys.shape[0]
        n_elite = max(1, min(config.elite_size, n - 1))
        elites = keys[:n_elite]
        others = keys[n_elite:] if n > n_elite else keys
        remaining = budget - used
        n_off = min(config.offspring_size, remaining)
        n_mut = min(config.mutant_size, remaining - n_off)

        pe = elites[rng.integers(n_elite, size=n_off)]
        po = others[rng.integers(others.shape[0], size=n_off)]
        children = np.where(rng.random((n_off, d)) < config.elite_bias, pe, po)
        fresh = np.vstack([children, rng.random((n_mut, d))])
        fresh_fit = evaluate(fresh)
        used += fresh.shape[0]

        i = int(np.argmax(fresh_fit))
        if fresh_fit[i] > best_y:
            best_x, best_y = decode_keys(fresh[i]), float(fresh_fit[i])
        trace.append(best_y)
        keys, fit = _survive(np.vstack([elites, fresh]),
                             np.concatenate([fit[:n_elite], fresh_fit]),
                             config.eliminate_duplicates)

    return RunResult(best_x=best_x, best_y=best_y, evals_used=used, trace=trace,
                     history=history)
