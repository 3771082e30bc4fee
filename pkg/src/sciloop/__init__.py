"""sciloop: closed-loop mechanism discovery against budgeted simulated oracles.

Subpackages split along the pipeline: ``exprlang`` (hypothesis expressions),
``oracle``/``chem``/``grn`` (budgeted simulators), ``fitkit`` (numerical
refinement), ``ensemble``/``proposer`` (hypothesis sourcing), ``engine`` (the
discovery loop), ``metrics`` and ``harness`` (evaluation and benchmark runs).
"""

__version__ = "0.1.0"

# chem and grn register their benchmark openers on import
from . import chem as _chem  # noqa: E402,F401
from . import grn as _grn    # noqa: E402,F401
