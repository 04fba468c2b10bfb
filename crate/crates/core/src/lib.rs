//! PIDNet: multimodal action-quality regression over pre-extracted
//! per-segment features.
//!
//! Each modality (rgb, flow, audio) is embedded into a shared channel
//! space, refined by iMambaWave blocks (identity / state-space / wavelet
//! decoupling with a learned per-step gate) and progressively fused across
//! three Group3M stages before a linear regression head.

pub mod bimamba;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod group3m;
pub mod imambawave;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod train;
pub mod wavelet;

pub use config::{Ablation, FusionStrategy, TrainConfig};
pub use error::{Error, Result};
pub use numcore::{Graph, Mode, ParamStore, RngState, SequenceTensor, Var};
