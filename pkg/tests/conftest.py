import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from papforge.nir import NirShared

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"


def evaluator_command(name, *args):
    return [sys.executable, str(FIXTURES / name), *map(str, args)]


def toy_shared(d=6, seed=0, dtype=np.float32, width=8):
    return NirShared(d, d_embed=5, enc_hidden=(width,), dec_hidden=(width,),
                     scorer_hidden=(width,), hyper_hidden=(width,), seed=seed, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_verdict(number, name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {name} ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
