"""Train NIRs on random OneMax instances and check that the closest OneMax
target recovered from each NIR is the one it was trained on.

    python3 scripts/onemax_verification.py --out runs/onemax
"""

import argparse
import sys
from pathlib import Path

from papforge.cli import main as cli

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--manifest", type=Path,
                   default=Path(__file__).parent / "manifests" / "onemax_verify.json")
    p.add_argument("--out", type=Path, default=Path("runs/onemax"))
    p.add_argument("--force", action="store_true")
    a = p.parse_args()
    argv = ["onemax-verify", "--manifest", str(a.manifest), "--out", str(a.out)]
    sys.exit(cli(argv + (["--force"] if a.force else [])))
