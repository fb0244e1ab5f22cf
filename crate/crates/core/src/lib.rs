//! Deep feed-forward sequential memory networks (DFSMN) for statistical
//! parametric speech synthesis.
//!
//! A DFSMN layer projects its input to a low-rank space, adds a learned
//! strided FIR filter over past and future projections (the memory block),
//! optionally adds the memory block output of the layer below through an
//! identity skip connection, and expands back to the hidden width. A stack of
//! such layers, followed by fully-connected layers and one linear or sigmoid
//! head per acoustic stream, maps linguistic features to vocoder parameters.
//!
//! Modules:
//! - [`tensor`]: dense matrices, scalar trait and [`Execution`] policy
//! - [`layers`]: forward and backward passes of the layer types
//! - [`config`] and [`network`]: configurations, presets A..I and whole-network passes
//! - [`trainer`] and [`gradcheck`]: SGD training and finite-difference checks
//! - [`metrics`]: MCD, F0 RMSE, BAPD, U/V error and normalization
//! - [`analysis`]: parameter counts, FLOPs and receptive fields
//! - [`dataset`], [`model_io`] and [`synth`]: file formats and synthetic tasks
//!
//! ```
//! use dfsmn::{CostReport, NetworkConfig, receptive_field};
//!
//! let e = NetworkConfig::preset("E").unwrap();
//! assert_eq!(receptive_field(&e), (120, 120));
//! assert_eq!(CostReport::for_preset("A").unwrap().param_count, 14_187_595);
//! ```

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use analysis::{flops_per_frame, receptive_field, CostReport};
pub use config::{LayerSpec, NetworkConfig, StreamSpec};
pub use dataset::{Dataset, Sequence};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{Activation, MemoryConfig};
pub use network::{backward, build_network, count_params, forward, NetworkParams, StreamMap};
pub use rng::SplitMix64;
pub use tensor::{Execution, Matrix, Precision, Real, SequenceTensor};
pub use trainer::{train, TrainConfig, TrainOutcome};
