use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::plot::{line_plot, Series};
use super::{power_spectrum, psnr, write_text, AnalysisError};
use crate::assets::{linear_to_srgb, unit_png, write_png};
use crate::gradtape::Tensor;
use crate::score::{DegenerateModel, ToyEncoder};
use crate::sds::{
    sds_grad, AdamConfig, AdamState, Channel, ChannelSet, DipConfig, LrSchedule, ParamState, Query, SdsOptions,
    WeightMode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Pixel,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Explicit,
    Dip,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Pixel => "pixel",
            Model::Latent => "latent",
        })
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::Explicit => "explicit",
            Param::Dip => "dip",
        })
    }
}

pub const CELLS: [(Model, Param); 4] = [
    (Model::Pixel, Param::Explicit),
    (Model::Pixel, Param::Dip),
    (Model::Latent, Param::Explicit),
    (Model::Latent, Param::Dip),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Toy2DConfig {
    pub steps: usize,
    /// Schedule for the explicit image.
    pub lr: LrSchedule,
    /// Schedule for the network weights.
    pub dip_lr: LrSchedule,
    pub dip: DipConfig,
    /// Record the best-so-far PSNR every this many steps.
    pub curve_every: usize,
}

impl Default for Toy2DConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: LrSchedule::default(),
            dip_lr: LrSchedule::dip_default(),
            dip: DipConfig::default(),
            curve_every: 10,
        }
    }
}

/// One optimization run.
#[derive(Clone, Debug)]
pub struct Toy2DCell {
    pub seed: u64,
    pub model: Model,
    pub param: Param,
    /// Final image against the target image.
    pub psnr: f64,
    /// `|enc(image) - enc(target)|`
    pub latent_residual: f64,
    pub latent_norm: f64,
    pub high_band_energy: f64,
    /// `(step, best PSNR so far)`
    pub curve: Vec<(usize, f64)>,
    pub image: Tensor,
}

/// Per-cell aggregate over seeds.
#[derive(Clone, Debug, Serialize)]
pub struct Toy2DSummary {
    pub model: Model,
    pub param: Param,
    pub seeds: usize,
    pub psnr_mean: f64,
    pub psnr_min: f64,
    pub psnr_max: f64,
    pub latent_residual_rel_max: f64,
    pub high_band_energy_mean: f64,
}

#[derive(Clone, Debug)]
pub struct Toy2DReport {
    pub target_high_band_energy: f64,
    pub cells: Vec<Toy2DCell>,
}

impl Toy2DReport {
    pub fn cell(&self, seed: u64, model: Model, param: Param) -> Option<&Toy2DCell> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.model == model && c.param == param)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.cells.iter().map(|c| c.seed).collect();
        s.dedup();
        s
    }

    pub fn summary(&self) -> Vec<Toy2DSummary> {
        CELLS
            .iter()
            .map(|&(model, param)| {
                let cs: Vec<&Toy2DCell> = self
                    .cells
                    .iter()
                    .filter(|c| c.model == model && c.param == param)
                    .collect();
                let n = cs.len().max(1) as f64;
                Toy2DSummary {
                    model,
                    param,
                    seeds: cs.len(),
                    psnr_mean: cs.iter().map(|c| c.psnr).sum::<f64>() / n,
                    psnr_min: cs.iter().map(|c| c.psnr).fold(f64::INFINITY, f64::min),
                    psnr_max: cs.iter().map(|c| c.psnr).fold(f64::NEG_INFINITY, f64::max),
                    latent_residual_rel_max: cs.iter().map(|c| c.latent_residual / c.latent_norm).fold(0.0, f64::max),
                    high_band_energy_mean: cs.iter().map(|c| c.high_band_energy).sum::<f64>() / n,
                }
            })
            .collect()
    }
}

/// sRGB-encoded copy of a linear image, the form used as a toy target.
pub fn display_image(linear: &Tensor) -> Tensor {
    linear.map(linear_to_srgb)
}

/// The optimized image: a free tensor or a DIP network.
enum Image {
    Explicit {
        pixels: BTreeMap<String, Tensor>,
        adam: AdamState,
    },
    Dip(Box<ParamState>),
}

impl Image {
    fn new(param: Param, init: Tensor, cfg: &Toy2DConfig, seed: u64) -> Result<Self, AnalysisError> {
        Ok(match param {
            Param::Explicit => Image::Explicit {
                pixels: BTreeMap::from([(EXPLICIT.to_string(), init)]),
                adam: AdamState::new(AdamConfig::default()),
            },
            Param::Dip => {
                let size = init.shape()[0];
                Image::Dip(Box::new(ParamState::dip(
                    size,
                    ChannelSet::only(Channel::Diffuse),
                    &cfg.dip,
                    seed,
                )?))
            }
        })
    }

    fn current(&mut self) -> Result<Tensor, AnalysisError> {
        Ok(match self {
            Image::Explicit { pixels, .. } => pixels[EXPLICIT].clone(),
            Image::Dip(p) => p.textures()?.diffuse,
        })
    }

    /// Backpropagates an image gradient and takes one Adam step.
    fn update(&mut self, grad: Tensor, lr: f32) -> Result<(), AnalysisError> {
        match self {
            Image::Explicit { pixels, adam } => {
                adam.step(pixels, &BTreeMap::from([(EXPLICIT.to_string(), grad)]), lr)?;
            }
            Image::Dip(p) => {
                let mut tg = p.textures()?.zeros_like();
                tg.diffuse = grad;
                let g = p.backward(&tg)?;
                p.apply(&g, lr)?;
            }
        }
        Ok(())
    }
}

const EXPLICIT: &str = "image";

fn run_cell(
    target: &Tensor,
    model: Model,
    param: Param,
    seed: u64,
    cfg: &Toy2DConfig,
) -> Result<Toy2DCell, AnalysisError> {
    let (h, w, c) = target.hwc()?;
    if h != w {
        return Err(AnalysisError::NotSquare(target.shape().to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.5f32, 0.1).expect("positive std");
    let init = Tensor::from_fn(vec![h, w, c], |_| dist.sample(&mut rng));
    let mut image = Image::new(param, init, cfg, seed)?;
    let lr = match param {
        Param::Explicit => cfg.lr,
        Param::Dip => cfg.dip_lr,
    };
    let enc = ToyEncoder::new();
    let z_star = enc.encode(target)?;
    let mut scorer = match model {
        Model::Pixel => DegenerateModel::single(target.clone()),
        Model::Latent => DegenerateModel::single(z_star.clone()),
    };
    let opts = SdsOptions {
        weight: WeightMode::Constant,
        ..Default::default()
    };
    let mut curve = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for step in 0..cfg.steps {
        let x = image.current()?;
        if cfg.curve_every > 0 && step % cfg.curve_every == 0 {
            best = best.max(psnr(&x, target)?);
            curve.push((step, best));
        }
        let grad = match model {
            Model::Pixel => sds_grad(&mut scorer, &x, &opts, Query::default(), &mut rng)?.0,
            Model::Latent => {
                let z = enc.encode(&x)?;
                let (gz, _) = sds_grad(&mut scorer, &z, &opts, Query::default(), &mut rng)?;
                enc.encode_adjoint(x.shape(), &gz)?
            }
        };
        image.update(grad, lr.at(step, cfg.steps))?;
    }
    let image = image.current()?;
    let final_psnr = psnr(&image, target)?;
    curve.push((cfg.steps, best.max(final_psnr)));
    let latent_residual = enc.encode(&image)?.sub(&z_star)?.norm();
    Ok(Toy2DCell {
        seed,
        model,
        param,
        psnr: final_psnr,
        latent_residual,
        latent_norm: z_star.norm(),
        high_band_energy: power_spectrum(&image)?.high_band_energy(),
        curve,
        image,
    })
}

/// Fits the target with each of the four model/parameterization cells for
/// every seed. Cells run on separate threads.
pub fn toy2d_experiment(target: &Tensor, cfg: &Toy2DConfig, seeds: &[u64]) -> Result<Toy2DReport, AnalysisError> {
    let jobs: Vec<(u64, Model, Param)> = seeds
        .iter()
        .flat_map(|&s| CELLS.iter().map(move |&(m, p)| (s, m, p)))
        .collect();
    let results: Vec<Result<Toy2DCell, AnalysisError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(s, m, p)| scope.spawn(move || run_cell(target, m, p, s, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("toy2d worker panicked"))
            .collect()
    });
    Ok(Toy2DReport {
        target_high_band_energy: power_spectrum(target)?.high_band_energy(),
        cells: results.into_iter().collect::<Result<_, _>>()?,
    })
}

const COLORS: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];

/// Writes `toy2d_report.csv` (one row per cell), `toy2d_runs.csv`,
/// `toy2d_curves.csv`, a curve plot and the final images.
pub fn write_toy2d(report: &Toy2DReport, dir: &Path) -> Result<(), AnalysisError> {
    let mut s =
        String::from("model,param,seeds,psnr_mean,psnr_min,psnr_max,latent_residual_rel_max,high_band_energy_mean\n");
    for r in report.summary() {
        s += &format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.6e},{:.6e}\n",
            r.model,
            r.param,
            r.seeds,
            r.psnr_mean,
            r.psnr_min,
            r.psnr_max,
            r.latent_residual_rel_max,
            r.high_band_energy_mean
        );
    }
    write_text(dir.join("toy2d_report.csv"), &s)?;

    let mut runs = String::from("seed,model,param,psnr,latent_residual,latent_norm,high_band_energy\n");
    let mut curves = String::from("seed,model,param,step,best_psnr\n");
    for c in &report.cells {
        runs += &format!(
            "{},{},{},{:.4},{:.6e},{:.6e},{:.6e}\n",
            c.seed, c.model, c.param, c.psnr, c.latent_residual, c.latent_norm, c.high_band_energy
        );
        for (step, p) in &c.curve {
            curves += &format!("{},{},{},{},{:.4}\n", c.seed, c.model, c.param, step, p);
        }
        write_png(
            dir.join(format!("toy2d_{}_{}_seed{}.png", c.model, c.param, c.seed)),
            &unit_png(&c.image)?,
        )?;
    }
    write_text(dir.join("toy2d_runs.csv"), &runs)?;
    write_text(dir.join("toy2d_curves.csv"), &curves)?;

    let pts: Vec<Vec<(f64, f64)>> = CELLS
        .iter()
        .map(|&(m, p)| {
            report
                .cells
                .iter()
                .find(|c| c.model == m && c.param == p)
                .map(|c| c.curve.iter().map(|(s, v)| (*s as f64, *v)).collect())
                .unwrap_or_default()
        })
        .collect();
    let series: Vec<Series<'_>> = pts
        .iter()
        .zip(COLORS)
        .map(|(p, color)| Series { points: p, color })
        .collect();
    write_png(dir.join("toy2d_curves.png"), &line_plot(&series, 480, 320))?;
    Ok(())
}
