//! Noise schedules and epsilon-prediction models.
//!
//! In-process models ([`DegenerateModel`], [`ToySrModel`]) have closed-form
//! denoisers and are used for analysis and tests. [`RemoteScorer`] talks to
//! an external server hosting pretrained models over a small binary protocol.

pub mod mock;
pub mod protocol;
mod remote;
mod schedule;
mod toy;

use crate::gradtape::{TapeError, Tensor};

pub use remote::RemoteScorer;
pub use schedule::{predict_x0, DiffusionSchedule, ALPHA_BAR_FLOOR};
pub use toy::{degenerate_eps, sr_downsample, sr_target, DegenerateModel, ToyEncoder, ToySrModel, SR_FACTOR};

/// Identifies a scene sample for per-view targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewKey(pub u64);

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("diffusion time {0} is outside [0, 1]")]
    TimeOutOfRange(f32),
    #[error("closed-form denoiser needs 0 < alpha_bar < 1, got {0}")]
    NoiseFree(f32),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("no target for view key {0:?}")]
    UnknownKey(Option<ViewKey>),
    #[error("image {height}x{width} is not divisible by {factor}")]
    Indivisible { height: usize, width: usize, factor: usize },
    #[error("condition shape {cond:?} is not 1/{factor} of image shape {image:?}")]
    SizeRatio {
        image: Vec<usize>,
        cond: Vec<usize>,
        factor: usize,
    },
    #[error("model requires a condition image")]
    MissingCondition,
    #[error(transparent)]
    Tensor(#[from] TapeError),
    #[error("connection to {endpoint}: {source}")]
    Connection {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server error: {0}")]
    Server(String),
}

impl ScoreError {
    /// Transport failures may succeed on a fresh connection; everything else
    /// is fatal.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Connection { .. })
    }
}

/// One epsilon query.
#[derive(Clone, Copy, Debug)]
pub struct ScoreRequest<'a> {
    pub x_t: &'a Tensor,
    pub t: f32,
    pub prompt: &'a str,
    /// Low-resolution image for super-resolution models.
    pub cond: Option<&'a Tensor>,
    pub guidance: f32,
    pub key: Option<ViewKey>,
    pub seed: u64,
}

impl<'a> ScoreRequest<'a> {
    pub fn new(x_t: &'a Tensor, t: f32) -> Self {
        Self {
            x_t,
            t,
            prompt: "",
            cond: None,
            guidance: 1.0,
            key: None,
            seed: 0,
        }
    }
}

/// Pixel value convention a model expects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// `[0, 1]`
    Unit,
    /// `[-1, 1]`
    Signed,
}

/// Epsilon-prediction model.
pub trait ScoreModel {
    fn schedule(&self) -> &DiffusionSchedule;

    fn value_range(&self) -> ValueRange {
        ValueRange::Unit
    }

    /// Predicted noise, shaped like `req.x_t`.
    fn eps(&mut self, req: &ScoreRequest<'_>) -> Result<Tensor, ScoreError>;
}

/// Classifier-free guidance: `uncond + scale * (cond - uncond)`.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, scale: f32) -> Result<Tensor, ScoreError> {
    Ok(eps_uncond.zip_map(eps_cond, |u, c| (1.0 - scale) * u + scale * c)?)
}
