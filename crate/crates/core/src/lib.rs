//! Training-free latent inter-frame pruning for chunked-causal diffusion
//! transformers.
//!
//! The pipeline has three stages:
//!
//! 1. [`pruning`] drops latent patches that barely change from the previous
//!    frame (and from the frame their substitute lives in).
//! 2. [`rope_attention`] recovers full-sequence self-attention from the kept
//!    tokens by rotating each kept key to every position it stands for.
//! 3. [`pruning::restore_tokens`] copies kept outputs back into pruned slots so
//!    the decoder sees a full grid.
//!
//! [`dit`] wires these into a toy few-step denoiser with a clean KV cache.

pub mod dit;
pub mod error;
pub mod grid;
pub mod latent_io;
pub mod numerics;
pub mod pruning;
pub mod rope_attention;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{FlagGrid, GridDims, TokenGrid, TokenPos, TokenSequence};
pub use latent_io::{LatentPatch, LatentVideo, MotionKind, SynthConfig};
pub use numerics::{Matrix, Real, SeededRng};
pub use pruning::{PruneConfig, PruneMap, PruneStats};
