//! Discrete partial information decomposition (PID) toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`dist`]: joint distributions over `(X1, X2, Y)`, pairwise marginals and
//!   the classical information measures, plus the JSON/CSV distribution codecs
//!   and an embedding quantizer.
//! - [`solver`]: the FastPID solver. A closed-form conditional-independence
//!   warm start is refined by Adam on softmax logits, with the objective
//!   evaluated on a Sinkhorn (iterative proportional fitting) projection and
//!   differentiated through every projection sweep.
//! - [`oracle`]: an algorithmically disjoint reference solver working in the
//!   coefficient space of marginal-preserving swap tensors.
//! - [`synth`]: exact bitwise gates and seeded, quantile-binned Gaussian tasks.
//! - [`scheduler`]: the uniqueness/synergy driven two-stage training controller.
//! - [`ecs`]: a toy sparse-coding simulator of modality competition.
//!
//! All information quantities are reported in bits.

pub mod dist;
pub mod ecs;
pub mod error;
pub mod oracle;
pub mod rng;
pub mod scheduler;
pub mod solver;
pub mod synth;

pub use dist::{Axes, InfoMeasures, Joint3, Marginal2};
pub use error::{PidError, Result};
pub use oracle::{OracleMethod, OracleResult};
pub use solver::{InitMethod, PidResult, SolverConfig};
