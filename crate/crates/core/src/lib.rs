//! Federated learning with differentially private, secret-shared gradient
//! aggregation.
//!
//! Clients clip and noise their gradients locally, split the result into
//! additive shares over a prime field and send one share to each of `m`
//! intermediate servers. Each server adds up the shares it holds and the
//! parameter server only ever reconstructs the noisy aggregate.
//!
//! Modules, bottom up:
//!
//! - [`field`]: arithmetic in Z_p and the fixed-point codec;
//! - [`sharing`]: full-threshold additive secret sharing;
//! - [`privacy`]: L1 clipping, the Laplace mechanism and the accountant;
//! - [`learning`]: the synthetic regression task, model and optimizers;
//! - [`transport`]: binary framing, in-process and TCP delivery;
//! - [`protocol`]: per-role state machines and training drivers;
//! - [`harness`]: experiment configuration, sweeps and reports.

pub mod error;
pub mod field;
pub mod harness;
pub mod learning;
pub mod privacy;
pub mod protocol;
pub mod sharing;
pub mod transport;

pub use error::{Error, Result};
pub use field::{FieldElement, FixedPointCodec, PrimeModulus};
pub use protocol::{MechanismKind, RoundMessage, TrainingConfig, TrainingReport};
