//! Score-distillation gradients, texture parameterizations and the
//! optimization loop.

mod adam;
mod dip;
mod grad;
mod params;
mod stage;

use std::path::PathBuf;

use crate::assets::AssetError;
use crate::gradtape::TapeError;
use crate::render::RenderError;
use crate::score::ScoreError;

pub use adam::{adam_update, AdamConfig, AdamState, LrSchedule};
pub use dip::{DipConfig, DIP_CHANNELS};
pub use grad::{sds_grad, sr_sds_grad, Query, SdsOptions, SdsSample, SrCondition, WeightMode};
pub use params::{Channel, ChannelSet, ParamMode, ParamState, DEFAULT_METALNESS, DEFAULT_ROUGHNESS, NORMAL_TILT};
pub use stage::{run_stage, Stage, StageConfig, StageContext, StageReport, StepMetrics, Views};

#[derive(Debug, thiserror::Error)]
pub enum SdsError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SdsError>,
    },
}

impl SdsError {
    /// The innermost error, skipping step context.
    pub fn root(&self) -> &SdsError {
        match self {
            SdsError::Step { source, .. } => source.root(),
            e => e,
        }
    }
}
