//! File formats, experiment configuration and the command implementations
//! behind the `trn-ood` binary.
//!
//! Algorithms live in [`trn_ood_core`]; this crate adds IO:
//!
//! - [`npy`]: NPY v1.0 arrays,
//! - [`formats`]: graph directories, JSON Lines texts, lexical caches, CSV tables,
//! - [`checkpoint`]: `TNT1` model checkpoints,
//! - [`config`]: TOML experiment configs and dataset loading,
//! - [`harness`]: `gen-shifts`, `train`, `eval` and `selfcheck`.

pub mod checkpoint;
pub mod config;
mod error;
pub mod formats;
pub mod harness;
pub mod npy;

pub use config::{Experiment, ExperimentConfig, MethodConfig, MethodKind};
pub use error::{HarnessError, Result};
