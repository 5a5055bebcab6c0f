//! Inference and evaluation engine for graphical-model keypoint estimation.
//!
//! Per-keypoint unary score maps and per-directed-edge displacement kernels go
//! in; exact tree marginals, keypoint predictions and PCK/loss metrics come
//! out. Messages are computed as 2D convolutions, so a 21-keypoint hand on a
//! 46x46 grid needs 40 convolutions per image.
//!
//! ```
//! use agmn_core::graph::default_hand_tree;
//! use agmn_core::synth::{synthesize_sample, CorruptionConfig};
//! use agmn_core::bp::{infer, InferOptions};
//!
//! let sample = synthesize_sample(&CorruptionConfig::default(), 0).unwrap();
//! let result = infer(&sample.unary, &sample.kernels, &default_hand_tree(), InferOptions::default()).unwrap();
//! assert_eq!(result.marginals.shape(), (21, 46, 46));
//! ```

pub mod bp;
pub mod error;
pub mod fft;
pub mod graph;
pub mod grid;
pub mod metrics;
pub mod oracle;
pub mod potentials;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
pub use graph::{build_schedule, default_hand_tree, Schedule, TreeGraph};
pub use grid::{Grid2D, GridIndex, TensorStack};
pub use potentials::{KeypointSet, PotentialSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
