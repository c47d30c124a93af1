//! Fourier spectral solver for the two-dimensional nonlinear bond-based
//! peridynamic wave equation
//!
//! ```text
//! rho u_tt(x, t) = int_{B_delta(x)} C(x' - x) (u(x', t) - u(x, t))^r dx' + b(x, t)
//! ```
//!
//! on a periodic square. The nonlocal operator is evaluated by binomial
//! expansion into convolutions computed with FFTs; time stepping is
//! Newmark-beta with a Newton-Krylov inner solve, or explicit
//! Störmer-Verlet. Non-periodic problems are handled by volume penalization
//! on an extended domain.
//!
//! ```
//! use peridyn::{BenchmarkSpec, Scheme, solve};
//!
//! let spec = BenchmarkSpec::smooth();
//! let u = solve(&spec, 0.1, 0.05, 0.5, None, Scheme::Newmark).unwrap();
//! assert_eq!(u.grid().n_points(), 10);
//! ```

pub mod error;
pub mod experiments;
pub mod grid;
pub mod integrators;
pub mod io;
pub mod operator;
pub mod penalization;
pub mod spectral;

pub use error::{PeridynError, Result};
pub use experiments::{
    integrator_comparison, observed_rate, reference_solution, restrict, solve,
    spatial_convergence_study, temporal_convergence_study, Axis, BenchmarkSpec, ComparisonRow,
    ConvergenceRow, ConvergenceTable, InitialCondition, IntegratorComparison, PenaltySettings,
    ReferencePolicy,
};
pub use grid::{relative_l2_error, relative_l2_error_sqrt, Field, Grid2D};
pub use integrators::{
    conjugate_gradient, integrate, integrate_with, newmark_step, newmark_step_detailed,
    newton_solve, stormer_verlet_step, JacobianSystem, NewtonOptions, NewtonReport, Problem,
    Scheme, State, TimeConfig, Trajectory,
};
pub use operator::{apply_direct, apply_spectral, jvp, ForcingFn, Linearization, OperatorSpec};
pub use penalization::{extend_domain, penalized_rhs, PenalizationConfig, PenaltyVariant};
pub use spectral::{
    build_kernel, disc_integral, forward_dft2, inverse_dft2, KernelSpectrum, Micromodulus,
    Spectrum,
};
