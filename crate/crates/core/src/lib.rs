//! Adam with safe effective-step clipping.
//!
//! The crate implements the momentum recursion
//! `p ← p + b(∇f(x) − p)`, `x ← x − a ⊙ p` with adaptive, coordinatewise
//! effective steps `a`, a clipping rule that keeps those steps inside a
//! closed-form safe interval, and a diagnostics layer that checks the
//! resulting Lyapunov decrease and convergence-rate bounds along traces.
//!
//! Module map:
//!
//! * [`types`]: vectors, hyperparameters, iterate state and trace records.
//! * [`objectives`]: the built-in test functions with analytic gradients.
//! * [`stepsize`]: effective-step policies and the clipping rule.
//! * [`bounds`]: safe step-size bounds and hyperparameter validation.
//! * [`engine`]: the optimization loops.
//! * [`diagnostics`]: Lyapunov, descent and rate-bound checks on traces.
//! * [`klrates`]: empirical rate-regime classification and the `x^p` sweep.
//! * [`cli`]: configuration parsing, experiment execution, CSV/JSON output.

pub mod bounds;
pub mod cli;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod klrates;
pub mod objectives;
pub mod stepsize;
pub mod types;

pub use error::{Error, Result};
pub use types::{HyperParams, IterateState, TraceRecord, Vector};
