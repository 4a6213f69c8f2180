//! Flexible f-divergence regularization for offline reinforcement learning on
//! tabular MDPs.
//!
//! - [`divergence`]: generator catalog, flexible composition, Bellman losses.
//! - [`mdp`]: tabular MDPs, exact evaluation, occupancy measures, gridworlds.
//! - [`dataset`]: offline datasets, behavior-mixture synthesis and file format.
//! - [`lp_oracle`]: exact regularized LP solves and duality checks.
//! - [`adaptive`]: on-line estimation of the flexible composition parameters.
//! - [`trainers`]: Flex-f-Q and Flex-f-DICE on tabular parameterizations.
//! - [`equivalence`]: closed-form reference losses (XQL, IQL, MSE).
//! - [`checks`]: invariant suites shared by the CLI and the tests.

pub mod adaptive;
pub mod checks;
pub mod dataset;
pub mod divergence;
pub mod equivalence;
pub mod error;
pub mod lp_oracle;
pub mod mdp;
pub mod persist;
pub mod trainers;

pub use divergence::{
    bellman_loss, compose_flex, preset, ConvexGenerator, Divergence, FlexF, Interval, LossProfile, LpMode,
    Penalty, Preset,
};
pub use error::{FlexError, Result};

/// Format a real with 17 significant digits, the precision used by every
/// text file this crate writes.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}
