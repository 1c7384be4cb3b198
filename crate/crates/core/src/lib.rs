//! Transferable adversarial attacks on small classifiers.
//!
//! The crate bundles everything needed to study attack transferability at
//! desk scale:
//!
//! * [`model`]: feed-forward and residual classifiers with reverse-mode
//!   gradients, stored as [`checkpoint`] files.
//! * [`data`] and [`train`]: synthetic or IDX datasets and SGD training of
//!   proxy/target pairs.
//! * [`attack`]: BIM, MI, NI, VT, RAP and the flatness-penalized TPA attack
//!   whose Hessian-vector products come from gradient differences.
//! * [`flatness`]: the transfer gap, its three-part bound and the `sin(x²)`
//!   landscape demo.
//! * [`oracle`]: finite-difference references used to check all of the above.
//! * [`harness`]: the reproducible pipeline behind the `tpa-lab` CLI.

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flatness;
pub mod harness;
pub mod kv;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{LayerSpec, Model};
pub use objective::InputLoss;
pub use tensor::Tensor;
