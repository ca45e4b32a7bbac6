//! Mann iteration for κ-strict pseudo-contractions on ℝᵈ, with a
//! computable rate of asymptotic regularity and numerical checks for every
//! inequality the rate depends on.
//!
//! The iteration is `xₙ₊₁ = λₙxₙ + (1−λₙ)Txₙ` with `κ < λₙ < 1`. Given a
//! rate of divergence `θ` for `Σ (λₙ−κ)(1−λₙ)` and a bound `b` on the
//! initial residual and on the distance to approximate fixed points, the
//! residual `‖xₙ−Txₙ‖` is below `ε` for every `n ≥ Φ(ε,b,θ) = θ(⌈b²/ε²⌉)`.
//!
//! ```
//! use regula_core::{build_operator, certify, theta_constant, CertifyOptions, OperatorSpec, StepSchedule, Vector};
//!
//! let op = build_operator(&OperatorSpec::Scaling { a: -2.0, dim: 1 }).unwrap();
//! let s = StepSchedule::constant(2.0 / 3.0, op.kappa()).unwrap();
//! let rate = theta_constant(2.0 / 3.0, op.kappa()).unwrap();
//! let x0 = Vector::new(vec![1.0]).unwrap();
//! let report = certify(&op, &s, &rate, &x0, 3.0, 0.5, &CertifyOptions::default()).unwrap();
//! assert_eq!(report.phi, 324);
//! assert!(report.bound_holds);
//! ```

pub mod error;
pub mod hilbert;
pub mod iteration;
pub mod operators;
pub mod par;
pub mod rates;
pub mod schedules;
pub mod verify;

pub use error::{Error, Result};
pub use hilbert::{convex_combination, identity_defect_convex, identity_defect_sum, inner, norm, Vector};
pub use iteration::{
    check_monotone_residuals, delta_sum, empirical_index, mann_step, run_mann, run_mann_with, IterationTrace,
    MonotoneReport, RecordMode, StepObserver, StepView,
};
pub use operators::{
    approx_fixed_point, build_operator, check_strict, evaluate, residual, strictness_defect, BallSampler, Domain,
    Operator, OperatorSpec, PointSampler, StrictReport,
};
pub use rates::{
    certify, phi, phi_krasnoselskii, quadratic_scaling_check, CertificationReport, CertifyOptions,
    QuadraticScalingReport,
};
pub use schedules::{
    default_rate, theta_constant, verify_theta, DivergenceRate, RateSource, ScheduleSpec, StepSchedule, ThetaReport,
};
pub use verify::{
    check_delta_claim, check_fixed_point_descent, check_growth_bounds, check_lemma_step, check_lemma_step_bounded,
    check_lemma_tzy, run_full_suite, CheckKind, CheckOutcome, SuiteConfig, Witness,
};
