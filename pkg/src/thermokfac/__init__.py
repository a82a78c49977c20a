"""Thermodynamic K-FAC: a second-order optimizer whose matrix inversions can
be delegated to a simulated analog equilibrium solver, with quantized device
I/O and an analytic hardware cost model."""

from .costmodel import (
    OPTIMIZER_TAGS,
    ComplexityInput,
    CostEstimate,
    amdahl_speedup,
    complexity_estimate,
    scaling_exponent,
)
from .kfac import (
    ExactBackend,
    FactorSolveError,
    KfacConfig,
    KroneckerFactorPair,
    QuantizedBackend,
    SingularFactorError,
    ThermodynamicBackend,
    apply_update,
    block_fisher_oracle,
    compute_factors_expand,
    compute_factors_mlp,
    compute_factors_reduce,
    ema_update,
    kfac_update_inversion,
    kfac_update_linsys,
    make_backend,
)
from .linalg import (
    ConvergenceError,
    NotPositiveDefiniteError,
    SpdReport,
    cholesky_solve,
    extreme_eigenvalues,
    kron_matvec,
    random_spd_matrix,
    read_matrix_text,
    spd_report,
    symmetrize,
    write_matrix_text,
)
from .nn import (
    AdamState,
    BatchTrace,
    DatasetSpec,
    MetricsRow,
    MlpModel,
    TrainConfig,
    TrainResult,
    adam_step,
    make_dataset,
    mlp_backward,
    mlp_forward,
    sgd_step,
    train,
)
from .quantize import (
    QuantSpec,
    quantize_conservative_spd,
    quantize_output,
    quantize_uniform,
)
from .thermo import (
    DefinitenessError,
    GramOperator,
    HardwareModel,
    InstabilityError,
    SolveEstimate,
    SolverConfig,
    analog_runtime_estimate,
    relaxation_time,
    thermo_inverse,
    thermo_solve,
    thermo_solve_gram,
)

__version__ = "0.1.0"
