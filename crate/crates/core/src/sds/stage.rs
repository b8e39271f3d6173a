use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::LrSchedule;
use super::grad::{sds_grad, sr_sds_grad, Query, SdsOptions, SrCondition};
use super::params::ParamState;
use super::SdsError;
use crate::assets::{write_texture_pngs, Mesh};
use crate::gradtape::Tensor;
use crate::render::{
    rasterize, sample_scene, shade, shade_vjp, tonemap, tonemap_vjp, GBuffer, PrefilteredEnv, SceneConfig, SceneSample,
    ShadeOptions, TextureSet,
};
use crate::score::{sr_downsample, ScoreModel, ViewKey};

/// Which half of the two-stage pipeline to run.
#[derive(Clone, Copy, Debug)]
pub enum Stage<'a> {
    One,
    /// Super-resolution refinement. `anchor` holds the frozen first-stage
    /// textures; with `fixed_condition` its renders condition every query,
    /// otherwise the current render is downsampled and used instead.
    Two {
        anchor: &'a TextureSet,
        fixed_condition: bool,
    },
}

/// Camera source. Fixed views are keyed by their index.
#[derive(Clone, Debug)]
pub enum Views {
    Random(SceneConfig),
    Fixed(Vec<SceneSample>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub steps: usize,
    pub batch: usize,
    pub render_size: usize,
    pub lr: LrSchedule,
    pub sds: SdsOptions,
    pub prompt: String,
    pub seed: u64,
    /// Write texture PNGs every this many steps; 0 disables.
    pub snapshot_every: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 4,
            render_size: 64,
            lr: LrSchedule::default(),
            sds: SdsOptions::default(),
            prompt: String::new(),
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.sds.validate()?;
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        if self.render_size < 16 {
            return Err(format!("render size {} is below 16", self.render_size));
        }
        if !(self.lr.start > 0.0 && self.lr.end > 0.0 && self.lr.start.is_finite() && self.lr.end.is_finite()) {
            return Err("learning rates must be positive".into());
        }
        Ok(())
    }
}

/// Inputs shared by every step of a stage.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub mesh: &'a Mesh,
    pub env: &'a PrefilteredEnv,
    pub shade: &'a ShadeOptions,
    /// Receives `metrics.csv`, `timing.csv` and `step_N/` snapshots.
    pub out_dir: Option<&'a Path>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct StageReport {
    pub metrics: Vec<StepMetrics>,
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

struct View {
    sample: SceneSample,
    key: Option<ViewKey>,
}

struct Rendered {
    gb: GBuffer,
    linear: Tensor,
    cond: Option<Tensor>,
}

fn draw_views(views: &Views, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<View>, SdsError> {
    match views {
        Views::Random(cfg) => (0..batch)
            .map(|_| {
                Ok(View {
                    sample: sample_scene(rng, cfg)?,
                    key: None,
                })
            })
            .collect(),
        Views::Fixed(list) => {
            if list.is_empty() {
                return Err(SdsError::Config("fixed view list is empty".into()));
            }
            let picks = rand::seq::index::sample(rng, list.len(), batch.min(list.len()));
            Ok(picks
                .into_iter()
                .map(|i| View {
                    sample: list[i],
                    key: Some(ViewKey(i as u64)),
                })
                .collect())
        }
    }
}

fn csv(dir: &Path, name: &str, header: &str) -> Result<BufWriter<File>, SdsError> {
    let path = dir.join(name);
    let mut f = File::create(&path).map(BufWriter::new).map_err(|source| SdsError::Io {
        path: path.clone(),
        source,
    })?;
    writeln!(f, "{header}").map_err(|source| SdsError::Io { path, source })?;
    Ok(f)
}

fn io_at(dir: &Path, name: &str) -> impl Fn(std::io::Error) -> SdsError {
    let path = dir.join(name);
    move |source| SdsError::Io {
        path: path.clone(),
        source,
    }
}

/// Runs `cfg.steps` optimization steps on `params`.
pub fn run_stage(
    stage: Stage<'_>,
    ctx: StageContext<'_>,
    params: &mut ParamState,
    scorer: &mut dyn ScoreModel,
    views: &Views,
    cfg: &StageConfig,
) -> Result<StageReport, SdsError> {
    cfg.validate().map_err(SdsError::Config)?;
    if let Stage::Two { anchor, .. } = stage {
        anchor.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = match ctx.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_at(dir, ""))?;
            Some((
                csv(dir, "metrics.csv", "step,grad_norm")?,
                csv(dir, "timing.csv", "step,seconds")?,
            ))
        }
        None => None,
    };
    let mut report = StageReport::default();
    let start = Instant::now();
    for step in 0..cfg.steps {
        let grad_norm =
            one_step(stage, ctx, params, scorer, views, cfg, step, &mut rng).map_err(|e| SdsError::Step {
                step,
                source: Box::new(e),
            })?;
        let m = StepMetrics {
            step,
            grad_norm,
            seconds: start.elapsed().as_secs_f64(),
        };
        report.metrics.push(m);
        if let (Some((metrics, timing)), Some(dir)) = (logs.as_mut(), ctx.out_dir) {
            writeln!(metrics, "{},{}", m.step, m.grad_norm).map_err(io_at(dir, "metrics.csv"))?;
            writeln!(timing, "{},{:.6}", m.step, m.seconds).map_err(io_at(dir, "timing.csv"))?;
        }
        let done = step + 1;
        if let Some(dir) = ctx.out_dir {
            if cfg.snapshot_every > 0 && (done % cfg.snapshot_every == 0 || done == cfg.steps) {
                let tex = params.textures()?;
                write_texture_pngs(&tex, &dir.join(format!("step_{done}")))?;
            }
        }
        if step % 100 == 0 {
            log::info!("step {step}: grad norm {grad_norm:.4e}");
        }
    }
    if let (Some((mut metrics, mut timing)), Some(dir)) = (logs, ctx.out_dir) {
        metrics.flush().map_err(io_at(dir, "metrics.csv"))?;
        timing.flush().map_err(io_at(dir, "timing.csv"))?;
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn one_step(
    stage: Stage<'_>,
    ctx: StageContext<'_>,
    params: &mut ParamState,
    scorer: &mut dyn ScoreModel,
    views: &Views,
    cfg: &StageConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, SdsError> {
    let lr = cfg.lr.at(step, cfg.steps);
    let tex = params.textures()?;
    let batch = draw_views(views, cfg.batch, rng)?;
    let size = cfg.render_size;

    let rendered: Vec<Result<Rendered, SdsError>> = par_map(&batch, |v| {
        let gb = rasterize(ctx.mesh, &v.sample, size, size)?;
        let linear = shade(&gb, &tex, ctx.env, &v.sample, ctx.shade)?;
        let cond = match stage {
            Stage::Two {
                anchor,
                fixed_condition: true,
            } => {
                let a = tonemap(&shade(&gb, anchor, ctx.env, &v.sample, ctx.shade)?);
                Some(sr_downsample(&a)?)
            }
            _ => None,
        };
        Ok(Rendered { gb, linear, cond })
    });
    let rendered: Vec<Rendered> = rendered.into_iter().collect::<Result<_, _>>()?;

    let inv = 1.0 / batch.len() as f32;
    let mut image_grads = Vec::with_capacity(batch.len());
    for (v, r) in batch.iter().zip(&rendered) {
        let x0 = tonemap(&r.linear);
        let query = Query {
            prompt: &cfg.prompt,
            key: v.key,
            cond: None,
        };
        let (g, _) = match stage {
            Stage::One => sds_grad(scorer, &x0, &cfg.sds, query, rng)?,
            Stage::Two { .. } => {
                let cond = match &r.cond {
                    Some(c) => SrCondition::Fixed(c),
                    None => SrCondition::SelfCond,
                };
                sr_sds_grad(scorer, &x0, cond, &cfg.sds, query, rng)?
            }
        };
        image_grads.push(tonemap_vjp(&r.linear, &g.scaled(inv)));
    }

    let jobs: Vec<(usize, &Tensor)> = image_grads.iter().enumerate().collect();
    let partial: Vec<Result<TextureSet, SdsError>> = par_map(&jobs, |(i, g)| {
        Ok(shade_vjp(
            &rendered[*i].gb,
            &tex,
            ctx.env,
            &batch[*i].sample,
            ctx.shade,
            g,
        )?)
    });
    let mut tex_grad = tex.zeros_like();
    for p in partial {
        tex_grad.axpy(1.0, &p?);
    }
    let grads = params.backward(&tex_grad)?;
    let norm = grads.values().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
    params.apply(&grads, lr)?;
    Ok(norm)
}
