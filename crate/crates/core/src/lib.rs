//! Sublinear expectations generated by nonlinear diffusions.
//!
//! A control model `(F, b, a)` defines the generator
//! `G(x, p, q) = sup_{f ∈ F} [b(f, x) p + ½ a(f, x) q]`. This crate parses the
//! coefficients, checks structural conditions on them, solves the associated
//! Hamilton-Jacobi-Bellman equation with a monotone explicit scheme, simulates
//! controlled diffusions, and runs numerical checks of the semigroup
//! properties.

pub mod error;
pub mod expr;
pub mod field;
pub mod generator;
pub mod hjb;
pub mod model;
pub mod rng;
pub mod sde;
pub mod terminal;
pub mod verify;

pub use error::{Error, Result};
pub use expr::{EvalError, Expr, ParseError};
pub use field::{FieldMeta, PolicyField, ValueField};
pub use generator::{argmax_control, evaluate_g};
pub use hjb::{
    cfl_bound, cfl_dt, extract_policy, semigroup_apply, solve_linear, solve_linearized,
    solve_nonlinear, BoundaryMode, DtPolicy, GridSpec, Linearization,
};
pub use model::{check_conditions, Condition, ConditionRecord, ControlSet, ControlSpec};
pub use sde::{convex_order_check, estimate, simulate, Estimate, PathEnsemble, Policy, SimParams};
pub use terminal::Terminal;
pub use verify::{CheckRecord, CheckRequest, McParams, Tolerances, VerificationReport, Verifier};
