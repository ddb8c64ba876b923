//! MDPs whose transition kernel is perturbed by an exogenous marked event process.
//!
//! - [`event_process`]: discrete-time marked Hawkes process and its influence bounds.
//! - [`mdp`]: augmented states, context truncation, a finite chain and a pendulum.
//! - [`bounds`]: closed-form truncation, policy-iteration and LSTD error bounds.
//! - [`oracle`]: exact dynamic programming on small finite augmented chains.
//! - [`lstd`]: pathwise least-squares temporal-difference evaluation.
//! - [`policy_iter`]: approximate policy iteration over event windows.
//! - [`experiment`]: seeded pendulum sweeps with CSV reports.

pub mod bounds;
pub mod config;
pub mod error;
pub mod event_process;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod lstd;
pub mod mdp;
pub mod oracle;
pub mod policy_iter;
pub mod special;

pub use error::{Error, Result};
pub use event_process::{EventHistory, HawkesParams, HawkesSpec};
pub use kernel::DecayKernel;

/// `rustc --version` of the compiler that built this crate.
pub const TOOLCHAIN: &str = env!("EXOMDP_TOOLCHAIN");
