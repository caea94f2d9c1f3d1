//! Region-controlled video editing with a toy pixel-space diffusion model.
//!
//! The sampling loop of a small text-conditioned video denoiser is steered by
//! two training-free mechanisms:
//!
//! - **attention-constraint guidance** ([`rad`]): per-timestep gradient descent
//!   on an inner/outer-region objective over cross-attention maps, pushing the
//!   response for each word of interest into its user-given bounding box;
//! - **invariant-region joint sampling** ([`irjs`]): per-timestep blending of
//!   the generated object region with a freshly diffused copy of the source
//!   video, so everything outside the edited boxes stays faithful to the
//!   source.
//!
//! [`pipeline`] wires both into a DDIM inversion + guided denoising loop,
//! [`metrics`] scores the results, and the `reatco` binary exposes the whole
//! thing as a config-driven CLI.

pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod io;
pub mod irjs;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rad;
pub mod regions;
pub mod rng;
pub mod scheduler;
pub mod tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("numeric failure at timestep {timestep}: {message}")]
    Numeric { timestep: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
