//! Core algorithms for out-of-distribution detection on text-rich networks.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO. It provides:
//!
//! - [`graph`]: the graph-with-embeddings data model and adjacency normalizations,
//! - [`rng`]: seeded, named random streams,
//! - [`tensor`]: a small dense tensor engine with reverse-mode gradients and Adam,
//! - [`shift`]: embedding, structure, label and temporal distribution-shift generators,
//! - [`text`]: lexical text augmentation with character-level noise,
//! - [`model`]: the text-topology detector network and a plain GCN baseline,
//! - [`detect`]: OOD scoring functions (MSP, energy, Mahalanobis, propagation, E-lign),
//! - [`metrics`]: AUROC, AUPR, FPR95 and ID accuracy,
//! - [`synth`]: synthetic planted-partition fixtures,
//! - [`diagnostics`]: self-check routines used by the command-line harness.
//!
//! All numerics go through `libm`, so results do not depend on the platform's
//! C math library.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod detect;
pub mod diagnostics;
mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod shift;
pub mod synth;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use graph::{CsrMatrix, TrnGraph};
pub use rng::Rng;
pub use tensor::{Real, Tape, Tensor, Var};
