//! Learning-based multiuser beamforming for holographic MIMO surfaces.

pub mod ao;
pub mod beamform;
pub mod equivariance;
pub mod error;
pub mod ggnn;
pub mod holo;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Real, C};

/// Double-precision aliases; persisted formats and the CLI use these.
pub type Matrix = linalg::CMatrix<f64>;
pub type Pattern = holo::PhasePattern<f64>;
pub type Surface = holo::SurfaceConfig<f64>;
pub type Sample = holo::ChannelSample<f64>;
pub type Params = ggnn::GgnnParams<f64>;
pub type Projector = beamform::RangeProjector<f64>;
pub type Complex = C<f64>;
