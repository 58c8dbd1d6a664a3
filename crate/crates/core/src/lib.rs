//! Joint power and admission control (JPAC) for interference-limited networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`network`]: physical channel, normalization to `(A, b, p̄)`, α selection.
//! - [`scenario`]: seeded random network generation.
//! - [`kernel`]: potential-reduction interior-point solver for the
//!   slack-augmented ℓq problem, with ε-KKT certificates and multistart.
//! - [`admission`]: exact supportability primitives and the NLPD / LQMD
//!   deflation algorithms.
//! - [`oracle`]: brute-force ℓ0 enumeration, an exact LP oracle and the
//!   q̄ estimation heuristic.
//! - [`harness`]: Monte-Carlo experiment driver writing CSV tables.

pub mod admission;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod network;
pub mod oracle;
pub mod rng;
pub mod scenario;

pub use error::{JpacError, Result};
pub use network::{normalize, select_alpha, sinr, AlphaRule, NetworkInstance, NormalizedProblem};
