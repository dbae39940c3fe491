"""Data-driven model-reference controller synthesis.

Design static state-feedback plus feed-forward gains matching a reference
model directly from input/state data of an unknown discrete-time LTI plant,
with Lyapunov stability constraints, noise-aware averaged synthesis and
closed-loop stability certificates.
"""

from .lti import (
    ControllerGains,
    ExperimentRecord,
    NoiseSpec,
    ReferenceModel,
    StateSpaceModel,
    dc_gain,
    reference_response,
    simulate_closed_loop,
    simulate_open_loop,
    spectral_radius,
)
from .snapshots import (
    RankReport,
    SnapshotMatrices,
    average_snapshots,
    build_snapshots,
    check_persistent_excitation,
    check_rank_condition,
)
from .synthesis import (
    MatchingInfeasibleError,
    SynthesisOptions,
    SynthesisOutcome,
    recover_gains,
    reconstruct_closed_loop,
    solve_exact,
    solve_relaxed,
    solve_sdp,
    verify_matching,
)
from .certificates import (
    CertificateUnavailableError,
    NoiseEnergyReport,
    StabilityCertificate,
    check_lyapunov,
    check_noise_energy,
    compute_alpha_beta,
    gaussian_average_bound,
    theorem4_certificate,
)
from .benchmark import (
    BenchmarkReport,
    ClosedLoopCollection,
    OpenLoopUniform,
    RunResult,
    ScenarioConfig,
    builtin_scenarios,
    compute_snr,
    gain_error,
    run_monte_carlo,
)

__version__ = "0.1.0"
