"""Controller-and-stopper games: HJB grid solver, lattice oracle and Monte Carlo checks."""

from ._version import __version__
from .errors import (
    CFLViolation,
    ExpressionError,
    MeshRejected,
    OrderingMismatch,
    SimulationError,
    SpecError,
    StopGameError,
    UnsupportedInstance,
)
from .expressions import Expr
from .hamiltonian import HamiltonianInput, hamiltonian_a, hamiltonian_min
from .hjb_solver import (
    ConvergenceRow,
    GridGeometry,
    SchemeConfig,
    ValueGrid,
    cfl_dt,
    convergence_study,
    dpp_residual,
    solve,
    step_backward,
)
from .lattice_game import (
    LatticeGame,
    LatticeMesh,
    ValueTable,
    backward_induction,
    build_chain,
    enumerate_strategies_value,
    game_tree_value,
    oracle_value,
    random_game,
)
from .model import (
    BenchmarkCase,
    ProblemSpec,
    ValidationReport,
    Violation,
    builtin_benchmarks,
    get_benchmark,
    validate_spec,
)
from .sde_sim import (
    AugmentedState,
    PathBundle,
    constant_policy,
    moment_scaling_diagnostic,
    payoff,
    simulate,
)
from .strategies import (
    SaddleCandidate,
    SaddleCertificate,
    SandwichReport,
    StoppingStrategy,
    boundary_hit,
    constant_time,
    evaluate_pair,
    extract_saddle,
    feedback_policy,
    non_anticipativity_replay,
    sandwich_test,
    snell_stop_rule,
)
