"""Simulation and verification tools for jump-diffusion SDEs driven by a
Wiener process and a non-centered Poisson measure."""
from .errors import *  # noqa: F401,F403
from .noise import (
    JumpEvent,
    MarkSpace,
    NoiseBatch,
    NoiseRealization,
    TimeGrid,
    build_grid,
    refine_noise,
    sample_noise,
)
from .system import (
    CoefficientField,
    ScalarFieldProcess,
    Scenario,
    SmoothScalarField,
    check_field_derivatives,
    fd_derivative,
    validate_scenario,
)
from .scenarios import (
    get_field,
    get_field_process,
    get_scenario,
    list_field_processes,
    list_fields,
    list_scenarios,
)
from .integrate import (
    Ensemble,
    FieldTrace,
    Path,
    euler_ensemble,
    evolve_scalar_field,
    simulate_ensemble,
    simulate_path,
)
from .jacobian import JacobianState, jacobian_fd_oracle, simulate_jacobian
from .calculus import (
    IncrementSeries,
    composite_consistency,
    inverse_jump_map,
    ito_series,
    ito_wentzel_series,
    ito_wentzell_series,
)
from .kernel import (
    KernelGridState,
    KernelInit,
    gaussian_kernel,
    kernel_along_path,
    kernel_ratio_integrals,
    kernel_spde_solve,
    volume_invariance,
)
from .integral import (
    FirstIntegralCandidate,
    check_conditions,
    conservation_oracle,
    eq35_residual_series,
)

__version__ = "0.1.0"
