"""Co-evolving BRKGA portfolios against neural instance representations."""

from .brkga import SolverConfig, brkga_run
from .coevolution import DaceRunConfig, run_ceps_baseline, run_dace
from .portfolio import Evaluator, PerfCache, Portfolio
from .problems import CcpInstance, ComicInstance, ExternalInstance, OneMaxInstance

__version__ = "0.1.0"
