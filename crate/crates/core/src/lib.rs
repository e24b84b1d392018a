//! Numerical stability analysis of compact sets under ODE flows.
//!
//! The crate integrates the flow of `ẋ = V(x)`, estimates ω-limit sets and
//! regions of attraction, searches ε–δ stability certificates, builds the
//! converse Lyapunov functions `ℓ(x) = sup_t d(φ(x,t), M)` and
//! `L(x) = ∫ α(t) ℓ(φ(x,t)) dt`, and checks user-supplied Lyapunov candidates.
//!
//! All verdicts are sampling-based evidence: every report records the seeds
//! and sample counts needed to replay it.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod limits;
pub mod lyapunov;
pub mod stability;

pub use error::{Error, Result};
pub use expr::{Expr, ScalarFieldSpec, VectorFieldSpec};
pub use flow::{flow, semigroup_defect, trajectory, IntegratorConfig, Method, Trajectory};
pub use geometry::{
    distance_to_set, hausdorff, sample_shell, shell_classify, CompactSetSpec, FiniteSetApprox, ShellClass, StatePoint,
};
pub use limits::{
    classify_attraction, estimate_omega, omega_distance_decay, roa_grid, AttractionLabel, AttractionParams,
    AttractionVerdict, OmegaEstimate, OmegaParams, RoaGrid,
};
pub use lyapunov::{
    big_l, converse_value, ell, verify_black_box, verify_certificate, verify_certificate_with,
    verify_converse_properties, CertificateOptions, CertificateReport, CertificateVerdict, ConverseConfig,
    ConverseProperties, ConverseValue, PropertyOptions, Quadrature, SampleRegion,
};
pub use stability::{
    check_positive_invariance, classify_stability, estimate_delta, uniform_attraction_time, DeltaResult, DeltaSearch,
    InvarianceCheck, StabilityConfig, StabilityReport, StabilityVerdict, Witness,
};
