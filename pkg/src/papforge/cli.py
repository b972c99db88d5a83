"""Command-line entry point.

    papforge <command> --manifest run.json --out runs/ccp [--seed 7] [--workers 4]
                       [--scale desk|paper] [--force]

Exit codes: 0 success, 1 runtime failure, 2 usage or manifest error. Log
events go to stderr as JSON lines.
"""

import argparse
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import emit_report, extract_features, fit_pca, onemax_verification
from .coevolution import RunDir, run_ceps_baseline, run_dace
from .manifest import ManifestError, parse_manifest
from .nir import NirInstance, load_nir_checkpoint, sample_training_data, save_nir_checkpoint, train_nirs
from .portfolio import Portfolio, baseline_brkga_pap, compute_norm_bounds, protocol_quality
from .problems import ccp_domain_mutate
from .seeding import derive_seed

COMMANDS = ("nir-train", "dace-run", "ceps-run", "evaluate", "features", "onemax-verify", "report")


class UsageError(Exception):
    pass


def log_event(event):
    sys.stderr.write(json.dumps({"t": round(time.time(), 3), **event}, sort_keys=True,
                                default=str) + "\n")
    sys.stderr.flush()


def default_workers():
    env = os.environ.get("PAPFORGE_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_parser():
    p = argparse.ArgumentParser(prog="papforge", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--manifest", type=Path, help="JSON run manifest")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--force", action="store_true", help="overwrite a completed run")
    return p


def _guard(path, force, what):
    if path.exists():
        if not force:
            raise UsageError(f"{what} already exists at {path}; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()


def cmd_nir_train(m, args):
    _guard(args.out / "nir", args.force, "an NIR checkpoint")
    train = m.instances("train")
    n = m.nir["samples_per_instance"]
    data = [sample_training_data(inst, n, derive_seed(m.seed, "nir-data", i), m.dace["budget"])
            for i, inst in enumerate(train)]
    hyper = m.nir_hyper()
    hyper.seed = derive_seed(m.seed, "nir-train")
    shared, E, report = train_nirs(data, hyper, log=lambda e: log_event({"event": "nir_epoch", **e}))
    emb = {f"nir-{i:03d}": E[i] for i in range(len(train))}
    save_nir_checkpoint(args.out / "nir", shared, emb, meta={
        "sources": [t.id for t in train], "best_epoch": report.best_epoch,
        "y_range": [[d.y_min, d.y_max] for d in data],
        "final_valid_pred": report.final["valid_pred"],
        "final_valid_recon": report.final["valid_recon"]})
    log_event({"event": "nir_saved", "path": str(args.out / "nir"),
               "valid_pred": report.final["valid_pred"]})


def _prepare_run(args):
    state = RunDir(args.out).state()
    if state.get("done"):
        if not args.force:
            raise UsageError(f"{args.out} holds a completed run; pass --force to overwrite")
        shutil.rmtree(args.out)


def cmd_dace_run(m, args):
    _prepare_run(args)
    P = run_dace(m.instances("train"), m.dace_config(args.workers), args.out, sink=log_event)
    log_event({"event": "done", "members": P.to_json()})


def cmd_ceps_run(m, args):
    if m.problem != "ccp":
        raise UsageError("ceps-run needs a domain generator; only problem 'ccp' ships one")
    _prepare_run(args)
    P = run_ceps_baseline(m.instances("train"), m.dace_config(args.workers), ccp_domain_mutate,
                          args.out, sink=log_event)
    log_event({"event": "done", "members": P.to_json()})


def final_portfolio(run_dir):
    rounds = sorted(int(p.name.split("_")[1]) for p in Path(run_dir).glob("round_*")
                    if (p / "pap.json").exists())
    if not rounds:
        raise FileNotFoundError(f"no portfolio found under {run_dir}")
    data = json.loads((Path(run_dir) / f"round_{rounds[-1]}" / "pap.json").read_text())
    return Portfolio.from_json(data["members"])


def cmd_evaluate(m, args):
    target = args.out / "evaluation.json"
    _guard(target, args.force, "an evaluation")
    portfolios = {"portfolio": final_portfolio(args.out), "baseline": baseline_brkga_pap()}
    runs, budget = m.evaluate["runs"], m.dace["budget"]
    rows = {}
    for inst in m.instances("test"):
        bounds = compute_norm_bounds(inst, m.sampling["real_bound_samples"],
                                     derive_seed(m.seed, "bounds", inst.dim))
        rows[inst.id] = {name: protocol_quality(P, inst, bounds, runs, budget, m.seed)
                         for name, P in portfolios.items()}
        log_event({"event": "evaluated", "instance": inst.id, **rows[inst.id]})
    summary = {name: float(np.mean([r[name] for r in rows.values()])) for name in portfolios}
    target.write_text(json.dumps({"runs": runs, "instances": rows, "summary": summary,
                                  "members": {k: P.to_json() for k, P in portfolios.items()}},
                                 indent=1, sort_keys=True) + "\n")
    log_event({"event": "evaluation", **summary})


def cmd_features(m, args):
    target = args.out / "features.json"
    _guard(target, args.force, "a feature file")
    n_sol, n_pairs = m.sampling["feature_solutions"], m.sampling["feature_pairs"]
    groups = [("train", m.instances("train")), ("test", m.instances("test"))]
    pool = []
    if (args.out / "nir" / "manifest.json").exists():
        shared, emb, _ = load_nir_checkpoint(args.out / "nir")
        rounds = sorted(int(p.name.split("_")[1]) for p in args.out.glob("round_*")
                        if (p / "pool" / "pool.json").exists())
        if rounds:
            pool = RunDir(args.out).load_pool(f"round_{rounds[-1]}/pool", shared).instances
        else:
            pool = [NirInstance(shared, emb[k], k) for k in sorted(emb)]
    groups.append(("pool", pool))
    points, vectors = [], []
    for group, insts in groups:
        for k, inst in enumerate(insts):
            fv = extract_features(inst, n_sol, n_pairs, derive_seed(m.seed, "features", group, k))
            points.append({"id": inst.id, "group": group, "features": fv.vector.tolist()})
            vectors.append(fv.vector)
    fit = [v for v, p in zip(vectors, points) if p["group"] in ("train", "test")]
    proj = fit_pca(fit)
    for p, xy in zip(points, proj.transform(np.array(vectors))):
        p["xy"] = [float(xy[0]), float(xy[1])]
    target.write_text(json.dumps({"points": points, "explained": proj.explained.tolist()},
                                 indent=1, sort_keys=True) + "\n")
    log_event({"event": "features", "points": len(points)})


def cmd_onemax_verify(m, args):
    target = args.out / "onemax_verify.json"
    _guard(target, args.force, "a verification result")
    r = m.recovery
    result = onemax_verification(
        n_instances=r["n_instances"], dim=r["dim"], samples=m.nir["samples_per_instance"],
        hyper=m.nir_hyper(), fes=r["fes"], n_search=r["n_search"], n_valid=r["n_valid"],
        n_random=r["n_random"], n_sampled=r["n_sampled"], seed=m.seed,
        log=lambda e: log_event({"event": "nir_epoch", **e}))
    args.out.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    ok = print_verification(result, r["n_instances"])
    return 0 if ok else 1


def verification_verdicts(result, n_instances):
    c = result["checks"]
    lo, hi = c["sampled_ratio_range"] or (None, None)
    return [
        ("exact target recovery", f"{c['exact_recoveries']}/{n_instances}",
         c["exact_recoveries"] >= n_instances - 1),
        ("validation prediction MSE", f"{c['max_valid_pred_mse']:.2e}",
         c["max_valid_pred_mse"] <= 5e-3),
        ("random/trained L1 ratio", f"{c['random_over_trained_L1']:.1f}",
         c["random_over_trained_L1"] is not None and c["random_over_trained_L1"] >= 5),
        ("sampled NIR L2/L1 range", f"[{lo:.2f}, {hi:.2f}]" if lo is not None else "n/a",
         lo is not None and lo >= 1 / 3 and hi <= 3),
        ("sampled vs random median L1",
         f"{c['sampled_median_L1']:.2e} < {c['random_median_L1']:.2e}"
         if c["sampled_median_L1"] is not None else "n/a",
         c["sampled_median_L1"] is not None and c["sampled_median_L1"] < c["random_median_L1"]),
    ]


def print_verification(result, n_instances):
    print(f"{'id':<12} {'target':<32} {'recovered':<32} {'L1':>10} {'L2':>10}")
    for row in result["trained"]:
        print(f"{row['id']:<12} {row['target']:<32} {row['recovered']:<32} "
              f"{row['L1']:>10.2e} {row['L2']:>10.2e}")
    for row in result["random"] + result["sampled"]:
        print(f"{row['id']:<12} {'-':<32} {row['recovered']:<32} "
              f"{row['L1']:>10.2e} {row['L2']:>10.2e}")
    ok = True
    for name, value, passed in verification_verdicts(result, n_instances):
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {value}")
        ok &= passed
    return ok


def cmd_report(m, args):
    out = emit_report(args.out)
    log_event({"event": "report", "path": str(out)})


HANDLERS = {
    "nir-train": cmd_nir_train, "dace-run": cmd_dace_run, "ceps-run": cmd_ceps_run,
    "evaluate": cmd_evaluate, "features": cmd_features, "onemax-verify": cmd_onemax_verify,
    "report": cmd_report,
}


def dispatch(command, manifest, args):
    return HANDLERS[command](manifest, args) or 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers is None:
        args.workers = default_workers()
    try:
        if args.command == "report":
            manifest = None
        else:
            if args.manifest is None:
                raise UsageError(f"{args.command} needs --manifest")
            manifest = parse_manifest(args.manifest, scale=args.scale, seed=args.seed)
        return dispatch(args.command, manifest, args)
    except (UsageError, ManifestError) as exc:
        log_event({"event": "error", "kind": type(exc).__name__, "message": str(exc)})
        parser.print_usage(sys.stderr)
        return 2
    except Exception as exc:
        log_event({"event": "error", "kind": type(exc).__name__, "message": str(exc)})
        return 1


if __name__ == "__main__":
    sys.exit(main())
