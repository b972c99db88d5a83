"""Desk-scale CCP experiment: DACE and the CEPS baseline on the same training
set, held-out evaluation against the manual BRKGA portfolio, landscape
features and a report for each run.

    python3 scripts/run_ccp_experiment.py --manifest scripts/manifests/ccp_smoke.json --out runs/smoke
"""

import argparse
import json
import sys
from pathlib import Path

from papforge.cli import main as cli


def step(*argv):
    code = cli([str(a) for a in argv])
    if code != 0:
        sys.exit(f"step {argv[0]} failed with exit code {code}")


def run(manifest, out, workers, force, skip_ceps):
    extra = ["--workers", workers] + (["--force"] if force else [])
    modes = [("dace", "dace-run")] + ([] if skip_ceps else [("ceps", "ceps-run")])
    summary = {}
    for name, command in modes:
        target = out / name
        step(command, "--manifest", manifest, "--out", target, *extra)
        step("evaluate", "--manifest", manifest, "--out", target, "--force")
        step("features", "--manifest", manifest, "--out", target, "--force")
        step("report", "--out", target)
        summary[name] = json.loads((target / "evaluation.json").read_text())["summary"]
    print(json.dumps(summary, indent=1, sort_keys=True))
    return summary


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--manifest", type=Path, default=Path(__file__).parent / "manifests" / "ccp_directional.json")
    p.add_argument("--out", type=Path, default=Path("runs/ccp"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.add_argument("--skip-ceps", action="store_true", help="only run DACE")
    a = p.parse_args()
    run(a.manifest, a.out, a.workers, a.force, a.skip_ceps)
