//! Scripted experiments and measurements.
//!
//! Every experiment returns a plain report struct; the `write_*` helpers turn
//! reports into CSV files (the stable surface) and advisory PNG plots.

pub mod gradcheck;
mod metrics;
mod plot;
mod spectrum;
mod sr_anchor;
mod toy2d;

use std::path::PathBuf;

use crate::assets::AssetError;
use crate::gradtape::TapeError;
use crate::score::ScoreError;
use crate::sds::SdsError;

pub use metrics::{psnr, PSNR_CAP};
pub use plot::{line_plot, Series};
pub use spectrum::{power_spectrum, SpectrumReport};
pub use sr_anchor::{sr_anchor_experiment, write_sr_anchor, SrAnchorConfig, SrAnchorReport, SrCheckpoint, SrRun};
pub use toy2d::{
    display_image, toy2d_experiment, write_toy2d, Model, Param, Toy2DCell, Toy2DConfig, Toy2DReport, Toy2DSummary,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Shape { left: Vec<usize>, right: Vec<usize> },
    #[error("power spectrum needs a square image, got {0:?}")]
    NotSquare(Vec<usize>),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Sds(#[from] SdsError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn write_text(path: PathBuf, text: &str) -> Result<(), AnalysisError> {
    std::fs::write(&path, text).map_err(|source| AnalysisError::Io { path, source })
}
