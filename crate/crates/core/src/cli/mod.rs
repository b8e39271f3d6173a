//! The `texdistill` executable: configuration, the texture pipeline and the
//! analysis experiments behind one set of subcommands.
//!
//! Exit codes: 0 success, 2 configuration error, 3 asset error, 4 scorer or
//! protocol error, 5 numerical failure.

mod config;
mod texgen;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{Guidance, Overrides, RunConfig, ScorerSpec, Stage2Config, ToyConfig, RESOLUTIONS, SERVER_ENV};
pub use texgen::{eval_views, render_views, texgen, TexgenReport};

use crate::analysis::{self, gradcheck, AnalysisError};
use crate::assets::{bundled, load_png_linear, load_texture_set, AssetError};
use crate::gradtape::TapeError;
use crate::render::RenderError;
use crate::score::ScoreError;
use crate::sds::{ChannelSet, ParamMode, SdsError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("asset: {0}")]
    Asset(#[from] AssetError),
    #[error("scorer: {0}")]
    Score(#[from] ScoreError),
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error("optimization: {0}")]
    Sds(#[from] SdsError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Asset(_) | CliError::Io { .. } => 3,
            CliError::Score(_) => 4,
            CliError::Render(e) => render_code(e),
            CliError::Sds(e) => sds_code(e),
            CliError::Analysis(e) => analysis_code(e),
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<TapeError> for CliError {
    fn from(e: TapeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn render_code(e: &RenderError) -> i32 {
    match e {
        RenderError::DegenerateCamera(_) | RenderError::Resolution { .. } | RenderError::Bounds(_) => 2,
        RenderError::NonFinite { .. } => 5,
        RenderError::Prefilter(_) | RenderError::Textures(_) | RenderError::ImageShape { .. } => 3,
    }
}

fn sds_code(e: &SdsError) -> i32 {
    match e.root() {
        SdsError::Score(_) => 4,
        SdsError::Render(r) => render_code(r),
        SdsError::Tape(_) => 5,
        SdsError::Asset(_) | SdsError::Io { .. } => 3,
        SdsError::Config(_) => 2,
        SdsError::Step { .. } => unreachable!("root skips step context"),
    }
}

fn analysis_code(e: &AnalysisError) -> i32 {
    match e {
        AnalysisError::Shape { .. }
        | AnalysisError::NotSquare(_)
        | AnalysisError::Asset(_)
        | AnalysisError::Io { .. } => 3,
        AnalysisError::Tape(_) => 5,
        AnalysisError::Score(_) => 4,
        AnalysisError::Sds(e) => sds_code(e),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "texdistill",
    version,
    about = "Score-distillation texture synthesis and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-stage texture optimization.
    Texgen(RunArgs),
    /// Render a texture set from the fixed evaluation viewpoints.
    Render(RenderArgs),
    /// Pixel/latent by explicit/DIP reconstruction study.
    Toy2d(Toy2dArgs),
    /// Fixed versus self conditioning under the super-resolution stand-in.
    Sranchor(SrAnchorArgs),
    /// Radially averaged power spectra of PNG images.
    Spectrum(SpectrumArgs),
    /// Finite-difference check of the shading gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// OBJ path or builtin:sphere / builtin:torus.
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// toy or remote:HOST:PORT.
    #[arg(long)]
    pub scorer: Option<ScorerSpec>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Enabled channels, e.g. d,r,m,n.
    #[arg(long)]
    pub channels: Option<ChannelSet>,
    /// Channels kept at their initial values.
    #[arg(long)]
    pub freeze: Option<ChannelSet>,
    /// Training environment: HDR path, train or studio.
    #[arg(long)]
    pub envlight: Option<String>,
    #[arg(long, value_parser = parse_on_off)]
    pub stage2: Option<bool>,
    /// explicit or dip.
    #[arg(long)]
    pub param: Option<ParamMode>,
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        o => Err(format!("expected on or off, got `{o}`")),
    }
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            mesh: self.mesh.clone(),
            prompt: self.prompt.clone(),
            scorer: self.scorer.clone(),
            resolution: self.resolution,
            seed: self.seed,
            out: self.out.clone(),
            channels: self.channels,
            freeze: self.freeze,
            envlight: self.envlight.clone(),
            stage2: self.stage2,
            param: self.param,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let env = std::env::var(SERVER_ENV).ok();
        RunConfig::resolve(self.config.as_deref(), &self.overrides(), env.as_deref())
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Texture directory with EXR maps; the bundled reference material when
    /// absent.
    #[arg(long)]
    pub textures: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 20)]
    pub views: usize,
}

#[derive(Debug, Args)]
pub struct Toy2dArgs {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value = "out/toy2d")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SrAnchorArgs {
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gain: f32,
    #[arg(long, default_value = "out/sranchor")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Square PNG images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "out/spectrum")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Relative error above which the command fails with exit code 5.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value = "out/gradcheck")]
    pub out: PathBuf,
}

fn write(path: PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|source| CliError::io(&path, source))
}

fn prepare(out: &Path, resolved: serde_json::Value) -> Result<(), CliError> {
    texgen::write_resolved(out, &serde_json::to_string_pretty(&resolved).expect("json value"))
}

fn run_render(args: &RenderArgs) -> Result<(), CliError> {
    let run = args.run.resolve_lenient()?;
    if args.size < 16 || args.views == 0 {
        return Err(CliError::Config("render: size must be >= 16 and views >= 1".into()));
    }
    let textures = match &args.textures {
        Some(dir) => load_texture_set(dir)?,
        None => bundled::reference_textures(run.resolution),
    };
    let n = render_views(&run, &textures, args.views, args.size)?;
    log::info!("wrote {n} views to {}", run.out.display());
    Ok(())
}

impl RunArgs {
    /// Like [`RunArgs::resolve`], with an empty prompt allowed to be absent.
    fn resolve_lenient(&self) -> Result<RunConfig, CliError> {
        let mut flags = self.overrides();
        if flags.prompt.is_none() && self.config.is_none() {
            flags.prompt = Some(String::new());
        }
        let env = std::env::var(SERVER_ENV).ok();
        RunConfig::resolve(self.config.as_deref(), &flags, env.as_deref())
    }
}

fn run_toy2d(args: &Toy2dArgs) -> Result<(), CliError> {
    let cfg = analysis::Toy2DConfig {
        steps: args.steps,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..args.seeds).collect();
    prepare(
        &args.out,
        serde_json::json!({ "experiment": "toy2d", "config": cfg, "seeds": seeds }),
    )?;
    let target = analysis::display_image(&bundled::astronaut_64());
    let report = analysis::toy2d_experiment(&target, &cfg, &seeds)?;
    analysis::write_toy2d(&report, &args.out)?;
    for r in report.summary() {
        log::info!("{}/{}: mean PSNR {:.2} dB", r.model, r.param, r.psnr_mean);
    }
    Ok(())
}

fn run_sranchor(args: &SrAnchorArgs) -> Result<(), CliError> {
    let cfg = analysis::SrAnchorConfig {
        steps: args.steps,
        gain: args.gain,
        ..Default::default()
    };
    if !(cfg.gain.is_finite() && cfg.gain >= 0.0) {
        return Err(CliError::Config(format!("gain {} must be finite and >= 0", cfg.gain)));
    }
    prepare(
        &args.out,
        serde_json::json!({ "experiment": "sranchor", "config": cfg }),
    )?;
    let init = analysis::display_image(&bundled::astronaut_256());
    let report = analysis::sr_anchor_experiment(&init, &cfg)?;
    analysis::write_sr_anchor(&report, &args.out)?;
    log::info!(
        "fixed: {:.2} dB to anchor; self: high band x{:.3}",
        report.fixed.last().psnr_to_anchor,
        report.self_cond.high_band_ratio()
    );
    Ok(())
}

fn run_spectrum(args: &SpectrumArgs) -> Result<(), CliError> {
    prepare(
        &args.out,
        serde_json::json!({ "experiment": "spectrum", "inputs": args.inputs }),
    )?;
    let mut bins = String::from("image,bin,count,mean_power,log10_mean_power\n");
    let mut summary = String::from("image,total_power,high_band_energy\n");
    let mut curves = Vec::new();
    for path in &args.inputs {
        let name = path.display().to_string();
        let report = analysis::power_spectrum(&load_png_linear(path)?)?;
        let mean = report.radial_mean();
        for (i, (m, c)) in mean.iter().zip(&report.bin_count).enumerate() {
            bins += &format!("{name},{i},{c},{m:.6e},{:.6}\n", m.max(1e-30).log10());
        }
        summary += &format!("{name},{:.6e},{:.6e}\n", report.total_power, report.high_band_energy());
        curves.push(
            report
                .log_radial()
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64, *v))
                .collect::<Vec<_>>(),
        );
    }
    write(args.out.join("spectrum.csv"), &bins)?;
    write(args.out.join("spectrum_summary.csv"), &summary)?;
    const COLORS: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];
    let series: Vec<analysis::Series<'_>> = curves
        .iter()
        .enumerate()
        .map(|(i, c)| analysis::Series {
            points: c,
            color: COLORS[i % COLORS.len()],
        })
        .collect();
    crate::assets::write_png(args.out.join("spectrum.png"), &analysis::line_plot(&series, 480, 320))?;
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    prepare(
        &args.out,
        serde_json::json!({ "experiment": "gradcheck", "seeds": args.seeds, "tolerance": args.tolerance }),
    )?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let rows = gradcheck::default_suite(&seeds);
    let mut csv = String::from("seed,channel,rel_err,max_entry_err\n");
    for r in &rows {
        csv += &format!("{},{},{:.6e},{:.6e}\n", r.seed, r.channel, r.rel_err, r.max_entry_err);
    }
    write(args.out.join("gradcheck.csv"), &csv)?;
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    log::info!("worst relative error {worst:.3e}");
    if worst.is_nan() || worst >= args.tolerance {
        return Err(CliError::Numerical(format!(
            "gradient check relative error {worst:.3e} exceeds {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}

pub fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Texgen(args) => {
            let cfg = args.resolve()?;
            let report = texgen(&cfg)?;
            if let Some(scores) = &report.recovery {
                let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                log::info!("stage 1 recovery: worst view {worst:.2} dB");
            }
            log::info!("textures written to {}", cfg.out.join("textures").display());
            Ok(())
        }
        Command::Render(args) => run_render(args),
        Command::Toy2d(args) => run_toy2d(args),
        Command::Sranchor(args) => run_sranchor(args),
        Command::Spectrum(args) => run_spectrum(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

/// Parses the process arguments, runs the subcommand and returns the exit
/// code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
