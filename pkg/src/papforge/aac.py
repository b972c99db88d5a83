"""Configuration search: find a BRKGA config that complements a partial portfolio.

Restarted first-improvement hill climbing over the five BRKGA parameters.
The objective of a candidate is the summed best-of quality of the partial
portfolio extended by that candidate.
"""

from dataclasses import dataclass

import numpy as np

from .brkga import PARAM_NAMES, SolverConfig, sample_config


@dataclass(frozen=True)
class AacBudget:
    max_trials: int = 100
    restarts: int = 4

    def __post_init__(self):
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def perturb_config(config, rng):
    """Resample one uniformly chosen parameter within its range."""
    values = dict(zip(PARAM_NAMES, config.to_list()))
    name = PARAM_NAMES[int(rng.integers(len(PARAM_NAMES)))]
    values[name] = getattr(sample_config(rng), name)
    return SolverConfig(**values)


def search_configuration(partial, instances, budget, score_fn, rng, trace=None):
    """Return the best configuration found within ``budget.max_trials`` candidates.

    ``score_fn(config)`` gives per-instance qualities aligned with
    ``instances`` (normally cached evaluator lookups). If ``trace`` is a list,
    ``(config, objective, incumbent_objective)`` is appended per trial.
    """
    if not instances:
        raise ValueError("configuration search needs at least one instance")
    members = list(partial)
    base = np.full(len(instances), -np.inf)
    for c in members:
        base = np.maximum(base, score_fn(c))

    def objective(c):
        return float(np.sum(np.maximum(base, score_fn(c))))

    restarts = min(budget.restarts, budget.max_trials)
    shares = [budget.max_trials // restarts + (1 if i < budget.max_trials % restarts else 0)
              for i in range(restarts)]
    best, best_obj = None, -np.inf
    for share in shares:
        current = sample_config(rng)
        current_obj = objective(current)
        candidate, cand_obj = current, current_obj
        for t in range(share):
            if t > 0:
                candidate = perturb_config(current, rng)
                cand_obj = objective(candidate)
                if cand_obj > current_obj:
                    current, current_obj = candidate, cand_obj
            if cand_obj > best_obj:
                best, best_obj = candidate, cand_obj
            if trace is not None:
                trace.append((candidate, cand_obj, best_obj))
    return best
