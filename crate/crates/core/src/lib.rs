//! Neural MIMO detection with an orthogonal-projection continual-learning
//! optimizer.
//!
//! The crate covers the full pipeline: Rician block-fading channel and QPSK
//! modem ([`modem`]), matched-filter features and exhaustive maximum-likelihood
//! detection ([`detect`]), a dense detector network ([`nn`]), SGD / Adam /
//! O-SGD updates ([`optim`]), checkpoints ([`checkpoint`]), run configuration
//! ([`config`]) and the training / BER evaluation harness ([`harness`]).

pub mod checkpoint;
pub mod config;
pub mod detect;
pub mod error;
pub mod harness;
pub mod modem;
pub mod nn;
pub mod optim;

pub use error::{Error, Result};
