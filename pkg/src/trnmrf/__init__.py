"""MAP inference for higher-order Markov random fields.

The dual of the local-polytope relaxation is smoothed with a temperature
``tau`` and minimized by trust-region Newton (exact clique Hessians),
a limited-memory quasi-Newton variant for chain decompositions, or FISTA.
Pattern-based potentials keep message passing sub-exponential in the
clique order.
"""
from .baseline import PrimalPoint, fista_solve, pd_gap, recover_feasible_primal, round_primal
from .errors import (
    CapacityError,
    InvalidDecompositionError,
    InvalidInputError,
    LineSearchError,
    MrfError,
    NumericalError,
    ParseError,
    SolverAbort,
    UnderflowError,
    UnsupportedDecompositionError,
)
from .model import (
    Clique,
    Decomposition,
    DensePotential,
    MrfModel,
    PatternPotential,
    Subgraph,
    brute_force_map,
    build_chain_decomposition,
    build_clique_decomposition,
    energy,
    greedy_chain_decomposition,
    load_model,
    save_model,
)
from .qn import qn_solve
from .smooth_dual import SmoothObjective, eval_nonsmooth_dual, eval_smooth_dual, smin
from .trace import SolveResult, TraceRow
from .trn import TrnConfig, solve

__version__ = "0.1.0"
