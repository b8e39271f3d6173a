use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::plot::{line_plot, Series};
use super::{power_spectrum, psnr, write_text, AnalysisError};
use crate::assets::{unit_png, write_png};
use crate::gradtape::Tensor;
use crate::score::{sr_downsample, ToySrModel};
use crate::sds::{sr_sds_grad, AdamConfig, AdamState, Query, SdsOptions, SrCondition, WeightMode};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SrAnchorConfig {
    pub steps: usize,
    /// Unsharp gain of the toy SR scorer.
    pub gain: f32,
    pub lr: f32,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for SrAnchorConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            gain: 1.0,
            lr: 0.01,
            checkpoint_every: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SrCheckpoint {
    pub step: usize,
    /// `PSNR(down(x), anchor)`
    pub psnr_to_anchor: f64,
    pub high_band_energy: f64,
    pub max_abs: f32,
}

#[derive(Clone, Debug)]
pub struct SrRun {
    pub checkpoints: Vec<SrCheckpoint>,
    pub image: Tensor,
}

impl SrRun {
    pub fn first(&self) -> &SrCheckpoint {
        &self.checkpoints[0]
    }

    pub fn last(&self) -> &SrCheckpoint {
        self.checkpoints.last().expect("step 0 is always recorded")
    }

    /// Final over initial high-band energy.
    pub fn high_band_ratio(&self) -> f64 {
        self.last().high_band_energy / self.first().high_band_energy
    }
}

#[derive(Clone, Debug)]
pub struct SrAnchorReport {
    pub anchor: Tensor,
    pub fixed: SrRun,
    pub self_cond: SrRun,
}

fn checkpoint(step: usize, x: &Tensor, anchor: &Tensor) -> Result<SrCheckpoint, AnalysisError> {
    Ok(SrCheckpoint {
        step,
        psnr_to_anchor: psnr(&sr_downsample(x)?, anchor)?,
        high_band_energy: power_spectrum(x)?.high_band_energy(),
        max_abs: x.data().iter().fold(0.0f32, |m, v| m.max(v.abs())),
    })
}

fn run(init: &Tensor, anchor: &Tensor, fixed: bool, cfg: &SrAnchorConfig) -> Result<SrRun, AnalysisError> {
    let mut scorer = ToySrModel::new(cfg.gain);
    let opts = SdsOptions {
        weight: WeightMode::Constant,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig::default());
    let mut params = BTreeMap::from([("image".to_string(), init.clone())]);
    let mut checkpoints = vec![checkpoint(0, init, anchor)?];
    for step in 1..=cfg.steps {
        let x = &params["image"];
        let cond = if fixed {
            SrCondition::Fixed(anchor)
        } else {
            SrCondition::SelfCond
        };
        let (g, _) = sr_sds_grad(&mut scorer, x, cond, &opts, Query::default(), &mut rng)?;
        adam.step(&mut params, &BTreeMap::from([("image".to_string(), g)]), cfg.lr)?;
        if step % cfg.checkpoint_every.max(1) == 0 || step == cfg.steps {
            checkpoints.push(checkpoint(step, &params["image"], anchor)?);
        }
    }
    Ok(SrRun {
        checkpoints,
        image: params.remove("image").expect("present"),
    })
}

/// Optimizes a high-resolution image against the toy SR scorer twice: once
/// conditioned on the fixed downsample of `init`, once on its own downsample.
pub fn sr_anchor_experiment(init: &Tensor, cfg: &SrAnchorConfig) -> Result<SrAnchorReport, AnalysisError> {
    let anchor = sr_downsample(init)?;
    let (fixed, self_cond) = std::thread::scope(|s| {
        let a = s.spawn(|| run(init, &anchor, true, cfg));
        let b = s.spawn(|| run(init, &anchor, false, cfg));
        (
            a.join().expect("sr worker panicked"),
            b.join().expect("sr worker panicked"),
        )
    });
    Ok(SrAnchorReport {
        fixed: fixed?,
        self_cond: self_cond?,
        anchor,
    })
}

/// Writes `sr_anchor.csv`, PSNR and energy plots, and the final images.
pub fn write_sr_anchor(report: &SrAnchorReport, dir: &Path) -> Result<(), AnalysisError> {
    let mut s = String::from("run,step,psnr_to_anchor,high_band_energy,max_abs\n");
    for (name, r) in [("fixed", &report.fixed), ("self", &report.self_cond)] {
        for c in &r.checkpoints {
            s += &format!(
                "{},{},{:.4},{:.6e},{:.6}\n",
                name, c.step, c.psnr_to_anchor, c.high_band_energy, c.max_abs
            );
        }
        write_png(
            dir.join(format!("sr_anchor_{name}.png")),
            &unit_png(&r.image.map(|v| v.clamp(0.0, 1.0)))?,
        )?;
    }
    write_text(dir.join("sr_anchor.csv"), &s)?;

    let curve = |r: &SrRun, f: fn(&SrCheckpoint) -> f64| -> Vec<(f64, f64)> {
        r.checkpoints.iter().map(|c| (c.step as f64, f(c))).collect()
    };
    let blue = [31, 119, 180];
    let red = [214, 39, 40];
    let p = [
        curve(&report.fixed, |c| c.psnr_to_anchor),
        curve(&report.self_cond, |c| c.psnr_to_anchor),
    ];
    let plot = line_plot(
        &[
            Series {
                points: &p[0],
                color: blue,
            },
            Series {
                points: &p[1],
                color: red,
            },
        ],
        480,
        320,
    );
    write_png(dir.join("sr_anchor_psnr.png"), &plot)?;
    let e = [
        curve(&report.fixed, |c| c.high_band_energy.max(1e-30).log10()),
        curve(&report.self_cond, |c| c.high_band_energy.max(1e-30).log10()),
    ];
    let plot = line_plot(
        &[
            Series {
                points: &e[0],
                color: blue,
            },
            Series {
                points: &e[1],
                color: red,
            },
        ],
        480,
        320,
    );
    write_png(dir.join("sr_anchor_energy.png"), &plot)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_run_records_checkpoints() {
        let init = Tensor::from_fn(vec![32, 32, 3], |i| ((i * 37) % 101) as f32 / 100.0);
        let cfg = SrAnchorConfig {
            steps: 20,
            checkpoint_every: 5,
            ..Default::default()
        };
        let r = sr_anchor_experiment(&init, &cfg).unwrap();
        let steps: Vec<usize> = r.fixed.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![0, 5, 10, 15, 20]);
        assert_eq!(r.anchor.shape(), &[8, 8, 3]);
        assert!(r.fixed.first().psnr_to_anchor >= 99.0);
    }
}
