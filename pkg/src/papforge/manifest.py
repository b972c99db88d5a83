"""JSON run manifests: schema validation, defaults and instance construction.

A manifest names the problem class, the training and test instances (as an
explicit list of instance specs or a generator block), and optional overrides
for the co-evolution, NIR and sampling settings. Unknown keys are rejected.
"""

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .aac import AacBudget
from .coevolution import DaceRunConfig
from .nir import NirHyper
from .portfolio import PAPER_NIR_BOUND_SAMPLES, PAPER_REAL_BOUND_SAMPLES
from .problems import (CCP_TRAIN_LAMBDA, ccp_make_instance, instance_from_spec, load_edge_list,
                       random_comic_instance, random_onemax)
from .seeding import DEFAULT_SEED, derive_seed, substream

PROBLEMS = ("onemax", "ccp", "comic", "external")


class ManifestError(ValueError):
    pass


_INT, _NUM, _STR, _BOOL = "int", "number", "string", "bool"

SCHEMA = {
    "problem": _STR,
    "train": "instances",
    "test": "instances",
    "seed": _INT,
    "dace": {
        "K": _INT, "max_round": _INT, "n_mining": _INT, "n_init_configs": _INT,
        "budget": _INT, "reps": _INT,
        "aac": {"max_trials": _INT, "restarts": _INT},
        "mutation": {"max_iter": _INT, "pgpe_samples": _INT},
    },
    "nir": {
        "samples_per_instance": _INT, "max_epochs": _INT, "patience": _INT,
        "batch_size": _INT, "lr": _NUM, "lambda1": _NUM, "lambda2": _NUM, "d_model": _INT,
        "hyper_out_std": _NUM,
    },
    "sampling": {
        "nir_bound_samples": _INT, "real_bound_samples": _INT,
        "feature_solutions": _INT, "feature_pairs": _INT,
    },
    "evaluate": {"runs": _INT},
    "recovery": {
        "n_instances": _INT, "dim": _INT, "fes": _INT, "n_search": _INT, "n_valid": _INT,
        "n_random": _INT, "n_sampled": _INT,
    },
}

GENERATOR_SCHEMA = {
    "kind": _STR, "count": _INT, "dims": "int_list", "lams": "num_list", "T": _INT,
    "graph": _STR, "R": _INT, "n_seed_a": _INT, "command": _STR, "dim": _INT,
}

DEFAULTS = {
    "seed": DEFAULT_SEED,
    "dace": {"K": 4, "max_round": 4, "n_mining": 20, "n_init_configs": 50, "budget": 800,
             "reps": 3, "aac": {"max_trials": 100, "restarts": 4},
             "mutation": {"max_iter": 200, "pgpe_samples": 8}},
    "nir": {"samples_per_instance": 20_000, "max_epochs": 200, "patience": 10,
            "batch_size": 256, "lr": 1e-3, "lambda1": 1.0, "lambda2": 5e-4, "d_model": None,
            "hyper_out_std": 0.01},
    "sampling": {"nir_bound_samples": 100_000, "real_bound_samples": 50_000,
                 "feature_solutions": 50_000, "feature_pairs": 500_000},
    "evaluate": {"runs": 20},
    "recovery": {"n_instances": 5, "dim": 30, "fes": 10_000, "n_search": 100_000,
                 "n_valid": 500_000, "n_random": 5, "n_sampled": 10},
}

PAPER_SCALE = {
    "dace": {"aac": {"max_trials": 1600}},
    "sampling": {"nir_bound_samples": PAPER_NIR_BOUND_SAMPLES,
                 "real_bound_samples": PAPER_REAL_BOUND_SAMPLES,
                 "feature_solutions": 1_000_000, "feature_pairs": 10_000_000},
}


def _check_type(kind, value, where):
    ok = {
        _INT: isinstance(value, int) and not isinstance(value, bool),
        _NUM: isinstance(value, (int, float)) and not isinstance(value, bool),
        _STR: isinstance(value, str),
        _BOOL: isinstance(value, bool),
        "int_list": isinstance(value, list) and all(isinstance(v, int) for v in value),
        "num_list": isinstance(value, list) and all(isinstance(v, (int, float)) for v in value),
    }[kind]
    if not ok:
        raise ManifestError(f"{where}: expected {kind}, got {json.dumps(value)}")


def _validate(schema, data, where):
    if not isinstance(data, dict):
        raise ManifestError(f"{where}: expected an object")
    for key, value in data.items():
        path = f"{where}.{key}"
        if key not in schema:
            raise ManifestError(f"{path}: unknown key {key!r}")
        kind = schema[key]
        if isinstance(kind, dict):
            _validate(kind, value, path)
        elif kind == "instances":
            _validate_instances(value, path)
        elif value is not None:
            _check_type(kind, value, path)


def _validate_instances(value, where):
    if isinstance(value, list):
        for i, spec in enumerate(value):
            if not isinstance(spec, dict) or "kind" not in spec:
                raise ManifestError(f"{where}[{i}]: instance spec needs a 'kind'")
    elif isinstance(value, dict):
        _validate(GENERATOR_SCHEMA, value, where)
        for need in ("kind", "count"):
            if need not in value:
                raise ManifestError(f"{where}.{need}: required")
    else:
        raise ManifestError(f"{where}: expected a list of instance specs or a generator object")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunManifest:
    problem: str
    train: object
    test: object
    seed: int
    dace: dict
    nir: dict
    sampling: dict
    evaluate: dict
    recovery: dict
    base_dir: Path = Path(".")

    def nir_hyper(self):
        n = self.nir
        return NirHyper(lambda1=n["lambda1"], lambda2=n["lambda2"], lr=n["lr"],
                        batch_size=n["batch_size"], max_epochs=n["max_epochs"],
                        patience=n["patience"], d_model=n["d_model"],
                        hyper_out_std=n["hyper_out_std"])

    def dace_config(self, workers=1):
        d, n, s = self.dace, self.nir, self.sampling
        hyper = self.nir_hyper()
        return DaceRunConfig(
            K=d["K"], max_round=d["max_round"], n_mining=d["n_mining"],
            n_init_configs=d["n_init_configs"], budget=d["budget"], reps=d["reps"],
            aac=AacBudget(d["aac"]["max_trials"], d["aac"]["restarts"]),
            mutation_max_iter=d["mutation"]["max_iter"],
            pgpe_samples=d["mutation"]["pgpe_samples"],
            nir_bound_samples=s["nir_bound_samples"], real_bound_samples=s["real_bound_samples"],
            nir_train_samples=n["samples_per_instance"], nir=hyper, seed=self.seed,
            workers=workers)

    def instances(self, which):
        block = self.train if which == "train" else self.test
        if block is None:
            raise ManifestError(f"manifest.{which}: no instances given")
        return build_instances(block, which, self.seed, self.base_dir)

    def to_dict(self):
        return {"problem": self.problem, "train": self.train, "test": self.test,
                "seed": self.seed, "dace": self.dace, "nir": self.nir,
                "sampling": self.sampling, "evaluate": self.evaluate, "recovery": self.recovery}


def parse_manifest(path_or_dict, scale="desk", seed=None):
    """Validate and fill defaults; ``seed`` overrides the manifest's seed."""
    if isinstance(path_or_dict, dict):
        data, base = path_or_dict, Path(".")
    else:
        path = Path(path_or_dict)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from None
        base = path.parent
    _validate(SCHEMA, data, "manifest")
    if "problem" not in data:
        raise ManifestError("manifest.problem: required")
    if data["problem"] not in PROBLEMS:
        raise ManifestError(f"manifest.problem: must be one of {PROBLEMS}")
    if scale not in ("desk", "paper"):
        raise ManifestError(f"unknown scale {scale!r}")
    full = _merge(DEFAULTS, PAPER_SCALE) if scale == "paper" else copy.deepcopy(DEFAULTS)
    full = _merge(full, {k: v for k, v in data.items() if v is not None})
    if seed is not None:
        full["seed"] = seed
    return RunManifest(problem=full["problem"], train=full.get("train"), test=full.get("test"),
                       seed=full["seed"], dace=full["dace"], nir=full["nir"],
                       sampling=full["sampling"], evaluate=full["evaluate"],
                       recovery=full["recovery"], base_dir=base)


def build_instances(block, which, seed, base_dir=Path(".")):
    if isinstance(block, list):
        out = []
        for spec in block:
            spec = dict(spec)
            if "graph" in spec:
                spec["graph"] = str(Path(base_dir) / spec["graph"])
            out.append(instance_from_spec(spec))
        return out
    kind, count = block["kind"], block["count"]
    rng = substream(seed, "instances", which)
    dims = block.get("dims") or [block.get("dim", 30)]
    out = []
    if kind == "onemax":
        for i in range(count):
            out.append(random_onemax(dims[i % len(dims)], rng, id=f"onemax-{which}-{i:03d}"))
    elif kind == "ccp":
        lams = block.get("lams") or [CCP_TRAIN_LAMBDA]
        for i in range(count):
            lam = lams[i % len(lams)]
            dim = dims[(i // len(lams)) % len(dims)]
            out.append(ccp_make_instance(dim, lam, T=block.get("T", 100),
                                         seed=derive_seed(seed, "ccp", which, i),
                                         id=f"ccp-{which}-{i:03d}"))
    elif kind == "comic":
        if "graph" not in block:
            raise ManifestError(f"manifest.{which}.graph: required for comic")
        graph = str(Path(base_dir) / block["graph"])
        edges = load_edge_list(graph)
        for i in range(count):
            out.append(random_comic_instance(edges, dims[i % len(dims)], rng,
                                             n_seed_a=block.get("n_seed_a", 0),
                                             R=block.get("R", 100), graph_path=graph,
                                             id=f"comic-{which}-{i:03d}"))
    elif kind == "external":
        if "command" not in block:
            raise ManifestError(f"manifest.{which}.command: required for external")
        out = [instance_from_spec({"kind": "external", "command": block["command"],
                                   "dim": block.get("dim"), "id": f"external-{which}-{i:03d}"})
               for i in range(count)]
    else:
        raise ManifestError(f"manifest.{which}.kind: unknown generator {kind!r}")
    return out
