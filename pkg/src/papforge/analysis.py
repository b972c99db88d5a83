"""Landscape features, PCA projection, OneMax recovery and run reports."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .brkga import SolverConfig, brkga_run
from .nir import NirHyper, NirInstance, NirShared, sample_training_data, train_nirs
from .portfolio import DegenerateInstanceError
from .problems import ProblemInstance, bits_to_str, random_onemax
from .seeding import derive_seed, substream

N_QUANTILES = 16
QUANTILES = np.arange(N_QUANTILES) / (N_QUANTILES - 1)
RECOVERY_CONFIG = SolverConfig(20, 70, 10, 0.7, False)
# weight scale of the untrained reference NIRs, fixed independently of training defaults
RANDOM_HYPER_OUT_STD = 0.01


@dataclass
class FeatureVector:
    b: np.ndarray  # mean |dy| per distance quantile
    c: np.ndarray  # std |dy| per distance quantile

    @property
    def vector(self):
        return np.concatenate([self.b, self.c])


def _minmax(y):
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi <= lo:
        raise DegenerateInstanceError("objective is constant over the sample")
    return (y - lo) / (hi - lo)


def quantile_classes(distances):
    """Distance selected for each quantile: the clamped ``floor(a*m)``-th largest."""
    ranked = np.sort(np.unique(distances))[::-1]
    m = len(ranked)
    k = np.clip(np.floor(QUANTILES * m).astype(int), 1, m)
    return ranked[k - 1]


def extract_features(instance, n_solutions=50_000, n_pairs=500_000, seed=0, chunk=100_000):
    """Fitness-distance features: per Hamming-distance quantile, mean and std of
    the absolute normalized objective difference between random pairs."""
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n_solutions, instance.dim), dtype=np.int8)
    y = _minmax(instance.evaluate_batch(X))
    i = rng.integers(n_solutions, size=n_pairs)
    j = rng.integers(n_solutions, size=n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    dist = np.empty(len(i), dtype=np.int64)
    for lo in range(0, len(i), chunk):
        dist[lo:lo + chunk] = np.count_nonzero(X[i[lo:lo + chunk]] != X[j[lo:lo + chunk]], axis=1)
    dy = np.abs(y[i] - y[j])
    if len(np.unique(dist)) < 2:
        raise ValueError("sampled pairs cover fewer than two Hamming distances")
    b, c = np.empty(N_QUANTILES), np.empty(N_QUANTILES)
    for q, d in enumerate(quantile_classes(dist)):
        v = dy[dist == d]
        b[q], c[q] = v.mean(), v.std()
    return FeatureVector(b, c)


@dataclass
class Projection:
    mean: np.ndarray
    components: np.ndarray  # (2, 32)
    explained: np.ndarray  # top-2 eigenvalues
    eigenvalues: np.ndarray  # all, descending

    def transform(self, vectors):
        return (np.atleast_2d(vectors) - self.mean) @ self.components.T

    def inverse(self, coords):
        return np.atleast_2d(coords) @ self.components + self.mean


def _as_matrix(items):
    return np.array([v.vector if isinstance(v, FeatureVector) else np.asarray(v) for v in items],
                    dtype=np.float64)


def fit_pca(fit_set):
    A = _as_matrix(fit_set)
    if A.shape[0] < 3:
        raise ValueError("PCA needs at least three fit vectors")
    mean = A.mean(axis=0)
    cov = (A - mean).T @ (A - mean) / A.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[1] <= 1e-12 * max(vals[0], 1e-300):
        raise ValueError("fit-set covariance has rank < 2")
    return Projection(mean, vecs[:, :2].T.copy(), vals[:2].copy(), vals)


def fit_project_pca(fit_set, all_vectors):
    """Fit on ``fit_set`` only, then map ``all_vectors`` to 2-D."""
    proj = fit_pca(fit_set)
    return proj.transform(_as_matrix(all_vectors)), proj


# ---------------------------------------------------------------- OneMax recovery


@dataclass
class RecoveryResult:
    target: np.ndarray
    L1: float
    L2: float
    evaluations: int


def onemax_scores(X, targets):
    """Normalized OneMax values of every row of ``X`` under each target: ``(n, B)``."""
    Xf = X.astype(np.float32)
    T = np.atleast_2d(targets).astype(np.float32)
    matches = Xf @ T.T + (1.0 - Xf) @ (1.0 - T.T)
    lo, hi = matches.min(axis=0), matches.max(axis=0)
    return (matches - lo) / np.maximum(hi - lo, 1e-12)


class _TargetFit(ProblemInstance):
    """Targets scored by negative MSE between OneMax and the reference values."""

    def __init__(self, X, y_ref, chunk=64):
        self.X, self.y_ref = X, y_ref.astype(np.float32)
        self.dim = X.shape[1]
        self.id = "onemax-target-fit"
        self.chunk = chunk

    def _evaluate(self, T):
        out = np.empty(T.shape[0])
        for lo in range(0, T.shape[0], self.chunk):
            s = onemax_scores(self.X, T[lo:lo + self.chunk])
            out[lo:lo + self.chunk] = -np.mean((s - self.y_ref[:, None]) ** 2, axis=0)
        return out


def recovery_loss(nir_eval, X, target, chunk=100_000):
    """MSE between min-max normalized ``nir_eval`` and OneMax(target) values on ``X``."""
    y = np.concatenate([np.asarray(nir_eval(X[lo:lo + chunk]), dtype=np.float64)
                        for lo in range(0, len(X), chunk)])
    y = _minmax(y)
    s = np.concatenate([onemax_scores(X[lo:lo + chunk], target)[:, 0]
                        for lo in range(0, len(X), chunk)]).astype(np.float64)
    return float(np.mean((s - y) ** 2))


def recover_closest_onemax(nir_eval, d_I, fes=10_000, seed=0, n_search=100_000,
                           n_valid=500_000, config=RECOVERY_CONFIG):
    """Search the OneMax target whose normalized objective best matches ``nir_eval``.

    ``nir_eval`` maps a batch of bit strings to objective values.
    """
    if fes < 1:
        raise ValueError("fes must be >= 1")
    rng = np.random.default_rng(seed)
    X1 = rng.integers(0, 2, size=(n_search, d_I), dtype=np.int8)
    y1 = _minmax(np.asarray(nir_eval(X1), dtype=np.float64))
    run = brkga_run(config, _TargetFit(X1, y1), fes, int(rng.integers(2**31 - 1)),
                    allow_partial=True)
    target = run.best_x
    L1 = recovery_loss(nir_eval, X1, target)
    X2 = rng.integers(0, 2, size=(n_valid, d_I), dtype=np.int8)
    L2 = recovery_loss(nir_eval, X2, target)
    return RecoveryResult(target, L1, L2, run.evals_used)


# ---------------------------------------------------------------- reports


def _round_dirs(run_dir):
    rounds = []
    for p in Path(run_dir).glob("round_*"):
        if (p / "pap.json").exists():
            rounds.append(int(p.name.split("_")[1]))
    return sorted(rounds)


def emit_report(run_dir, out_dir=None):
    """Write ``qualities.csv``, ``rounds.csv``, ``summary.json`` and, when the inputs
    exist, ``coords.csv`` and ``evaluation.csv``."""
    run_dir = Path(run_dir)
    if not (run_dir / "round_0" / "pap.json").exists():
        raise FileNotFoundError(f"{run_dir} has no round_0/pap.json")
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    rounds = _round_dirs(run_dir)
    paps = {r: json.loads((run_dir / f"round_{r}" / "pap.json").read_text()) for r in rounds}

    with open(out / "qualities.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "instance", "quality"])
        for r in rounds:
            for inst in sorted(paps[r]["qualities"]):
                w.writerow([r, inst, repr(paps[r]["qualities"][inst])])
    with open(out / "rounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "objective", "pool_size", "members"])
        for r in rounds:
            p = paps[r]
            w.writerow([r, repr(p["objective"]), len(p["qualities"]), json.dumps(p["members"])])

    summary = {
        "rounds": len([r for r in rounds if r > 0]),
        "objectives": [paps[r]["objective"] for r in rounds],
        "final_members": paps[rounds[-1]]["members"],
    }
    feat = run_dir / "features.json"
    if feat.exists():
        data = json.loads(feat.read_text())
        with open(out / "coords.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "group", "pc1", "pc2"])
            for row in data["points"]:
                w.writerow([row["id"], row["group"], repr(row["xy"][0]), repr(row["xy"][1])])
        summary["feature_points"] = len(data["points"])
    ev = run_dir / "evaluation.json"
    if ev.exists():
        data = json.loads(ev.read_text())
        with open(out / "evaluation.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "portfolio", "quality"])
            for inst in sorted(data["instances"]):
                for name in sorted(data["instances"][inst]):
                    w.writerow([inst, name, repr(data["instances"][inst][name])])
        summary["evaluation"] = data["summary"]
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------- OneMax verification


def onemax_verification(n_instances=5, dim=30, samples=20_000, hyper=None, fes=10_000,
                        n_search=100_000, n_valid=500_000, n_random=5, n_sampled=10, seed=0,
                        log=None):
    """Train NIRs on random OneMax instances and try to recover each target.

    Also recovers the closest OneMax for randomly weighted NIRs and for NIRs
    spawned from N(0, I) embeddings on the trained shared network. Returns a
    JSON-able dict with per-NIR rows and the check outcomes.
    """
    hyper = hyper or NirHyper()
    rng = substream(seed, "onemax-targets")
    targets = [random_onemax(dim, rng, id=f"onemax-{i:03d}") for i in range(n_instances)]
    data = [sample_training_data(m, samples, derive_seed(seed, "nir-data", i))
            for i, m in enumerate(targets)]
    hyper = NirHyper(**{**hyper.__dict__, "seed": derive_seed(seed, "nir-train")})
    shared, E, report = train_nirs(data, hyper, log=log)

    def recover(inst, k, group):
        res = recover_closest_onemax(inst.evaluate_batch, dim, fes, derive_seed(seed, group, k),
                                     n_search, n_valid)
        return {"id": inst.id, "recovered": bits_to_str(res.target), "L1": res.L1, "L2": res.L2}

    trained = []
    for i, m in enumerate(targets):
        row = recover(NirInstance(shared, E[i], f"nir-{i:03d}"), i, "recover-trained")
        row["target"] = bits_to_str(m.target)
        row["exact"] = row["recovered"] == row["target"]
        row["valid_pred_mse"] = report.final["valid_pred"][i]
        trained.append(row)
    random_rows = []
    for k in range(n_random):
        s = derive_seed(seed, "random-nir", k)
        net = NirShared(dim, d_embed=hyper.d_embed, seed=s, hyper_out_std=RANDOM_HYPER_OUT_STD)
        e = np.random.default_rng(s).standard_normal(hyper.d_embed)
        random_rows.append(recover(NirInstance(net, e, f"random-{k:03d}"), k, "recover-random"))
    e_rng = substream(seed, "sampled-embeddings")
    sampled = [recover(NirInstance(shared, e_rng.standard_normal(hyper.d_embed),
                                   f"sampled-{k:03d}"), k, "recover-sampled")
               for k in range(n_sampled)]

    trained_l1 = [r["L1"] for r in trained]
    random_l1 = [r["L1"] for r in random_rows]
    sampled_ratio = [r["L2"] / r["L1"] if r["L1"] > 0 else float("inf") for r in sampled]
    checks = {
        "exact_recoveries": sum(r["exact"] for r in trained),
        "max_valid_pred_mse": max(r["valid_pred_mse"] for r in trained),
        "random_over_trained_L1": (float(np.min(random_l1)) / max(float(np.max(trained_l1)), 1e-300)
                                   if random_rows else None),
        "sampled_ratio_range": [float(np.min(sampled_ratio)), float(np.max(sampled_ratio))]
        if sampled else None,
        "sampled_median_L1": float(np.median([r["L1"] for r in sampled])) if sampled else None,
        "random_median_L1": float(np.median(random_l1)) if random_rows else None,
    }
    return {"trained": trained, "random": random_rows, "sampled": sampled, "checks": checks,
            "epochs": len(report.history) - 1, "best_epoch": report.best_epoch}
