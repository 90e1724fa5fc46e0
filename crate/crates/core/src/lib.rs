//! Preconditioned diffusion sampling against analytic score oracles.

pub mod alpha;
pub mod diagnostics;
mod error;
pub mod fourier;
pub mod ingest;
pub mod oracle;
pub mod precond;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;

pub use error::{PdsError, Result};
pub use precond::{GradientOrder, PixelMask, Preconditioner, SolenoidalKind, SolenoidalOp, SpectralMask};
pub use rng::RngStream;
pub use sampler::{pds_sample, run_sampler, InitialLaw, Mode, SampleRun, SamplerConfig};
pub use schedule::{EpsilonRule, Schedule, ScheduleKind};
pub use tensor::{Shape, Tensor};
pub use oracle::{Covariance, GaussianTarget, MixtureTarget, ScoreOracle};
