use std::collections::BTreeMap;
use std::path::Path;

use super::config::{RunConfig, ScorerSpec};
use super::CliError;
use crate::analysis::psnr;
use crate::assets::{bundled, load_png_linear, load_texture_set, write_texture_pngs, write_texture_set, Mesh};
use crate::render::{
    fixed_views, prefilter_env, rasterize, shade, tonemap, PrefilteredEnv, SceneSample, TextureSet, DEFAULT_MIPS,
    DEFAULT_SAMPLES,
};
use crate::score::{DegenerateModel, RemoteScorer, ScoreModel, ToySrModel, ViewKey};
use crate::sds::{run_stage, ParamMode, ParamState, Stage, StageConfig, StageContext, StageReport, Views};

#[derive(Clone, Debug)]
pub struct TexgenReport {
    pub stage1: StageReport,
    pub stage2: Option<StageReport>,
    /// Toy mode: PSNR of each first-stage render against its target.
    pub recovery: Option<Vec<f64>>,
    pub textures: TextureSet,
}

pub(crate) fn write_resolved(out: &Path, json: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::io(out, source))?;
    let path = out.join("config.resolved.json");
    std::fs::write(&path, json).map_err(|source| CliError::io(&path, source))
}

fn load_env(name: &str) -> Result<PrefilteredEnv, CliError> {
    let env = bundled::env_by_name(name)?;
    Ok(prefilter_env(&env, DEFAULT_MIPS, DEFAULT_SAMPLES)?)
}

fn initial_params(cfg: &RunConfig) -> Result<ParamState, CliError> {
    let params = match cfg.param {
        ParamMode::Explicit => ParamState::explicit(cfg.resolution, cfg.channels, cfg.seed),
        ParamMode::Dip => ParamState::dip(cfg.resolution, cfg.channels, &cfg.dip, cfg.seed)?,
    };
    let mut params = params.with_frozen(cfg.freeze)?;
    if let Some(path) = &cfg.init_diffuse {
        let image = load_png_linear(path)?;
        if image.shape() != [cfg.resolution, cfg.resolution, 3] {
            return Err(CliError::Config(format!(
                "init_diffuse: {} is {:?}, expected {}x{} RGB",
                path.display(),
                image.shape(),
                cfg.resolution,
                cfg.resolution
            )));
        }
        params.set_diffuse(&image)?;
    }
    Ok(params)
}

fn render_targets(
    mesh: &Mesh,
    env: &PrefilteredEnv,
    cfg: &RunConfig,
    textures: &TextureSet,
    views: &[SceneSample],
    size: usize,
) -> Result<Vec<crate::gradtape::Tensor>, CliError> {
    views
        .iter()
        .map(|v| {
            let gb = rasterize(mesh, v, size, size)?;
            Ok(tonemap(&shade(&gb, textures, env, v, &cfg.shade)?))
        })
        .collect()
}

fn toy_views(cfg: &RunConfig) -> Vec<SceneSample> {
    fixed_views(
        cfg.toy.views,
        cfg.toy.view_radius,
        cfg.toy.view_elevation_deg,
        cfg.scene.fov_deg,
    )
    .into_iter()
    .map(|v| SceneSample {
        exposure: cfg.scene.exposure,
        ..v
    })
    .collect()
}

fn check_finite(report: &StageReport, stage: usize) -> Result<(), CliError> {
    match report.metrics.iter().find(|m| !m.grad_norm.is_finite()) {
        Some(m) => Err(CliError::Numerical(format!(
            "stage {stage} step {}: non-finite gradient norm",
            m.step
        ))),
        None => Ok(()),
    }
}

fn remote(endpoint: &str) -> Result<Box<dyn ScoreModel>, CliError> {
    let scorer = RemoteScorer::connect(endpoint)?;
    log::info!("connected to {endpoint} ({})", scorer.hello().model);
    Ok(Box::new(scorer))
}

/// Runs the two-stage pipeline described by `cfg`, writing everything under
/// `cfg.out`.
pub fn texgen(cfg: &RunConfig) -> Result<TexgenReport, CliError> {
    let out = cfg.out.as_path();
    write_resolved(out, &cfg.to_json())?;
    let mesh = bundled::mesh_by_name(&cfg.mesh)?;
    let env = load_env(&cfg.env_train)?;
    let mut params = initial_params(cfg)?;

    let stage1_dir = out.join("stage1");
    let ctx = StageContext {
        mesh: &mesh,
        env: &env,
        shade: &cfg.shade,
        out_dir: Some(&stage1_dir),
    };
    let (stage1, recovery) = match &cfg.scorer {
        ScorerSpec::Toy => {
            let target = match &cfg.toy.target {
                Some(dir) => load_texture_set(dir)?,
                None => bundled::reference_textures(cfg.resolution),
            };
            write_texture_pngs(&target, &out.join("target"))?;
            let views = toy_views(cfg);
            let size = cfg.stage1.render_size;
            let targets = render_targets(&mesh, &env, cfg, &target, &views, size)?;
            let keyed: BTreeMap<ViewKey, _> = targets
                .iter()
                .enumerate()
                .map(|(i, t)| (ViewKey(i as u64), t.clone()))
                .collect();
            let mut scorer = DegenerateModel::keyed(keyed);
            let report = run_stage(
                Stage::One,
                ctx,
                &mut params,
                &mut scorer,
                &Views::Fixed(views.clone()),
                &cfg.stage1,
            )?;
            let renders = render_targets(&mesh, &env, cfg, &params.textures()?, &views, size)?;
            let scores = renders
                .iter()
                .zip(&targets)
                .map(|(r, t)| psnr(r, t))
                .collect::<Result<Vec<f64>, _>>()?;
            let mut csv = String::from("view,psnr\n");
            for (i, p) in scores.iter().enumerate() {
                csv += &format!("{i},{p:.4}\n");
            }
            let path = stage1_dir.join("recovery.csv");
            std::fs::write(&path, csv).map_err(|source| CliError::io(&path, source))?;
            (report, Some(scores))
        }
        ScorerSpec::Remote(endpoint) => {
            let mut scorer = remote(endpoint)?;
            let views = Views::Random(cfg.scene.clone());
            (
                run_stage(Stage::One, ctx, &mut params, scorer.as_mut(), &views, &cfg.stage1)?,
                None,
            )
        }
    };
    check_finite(&stage1, 1)?;
    let anchor = params.textures()?;
    write_texture_set(&anchor, stage1_dir.join("textures"))?;

    let stage2 = if cfg.stage2.enabled {
        let dir = out.join("stage2");
        let ctx = StageContext {
            out_dir: Some(&dir),
            ..ctx
        };
        let mut scorer: Box<dyn ScoreModel> = match cfg.scorer_stage2.as_ref().unwrap_or(&cfg.scorer) {
            ScorerSpec::Toy => Box::new(ToySrModel::new(cfg.toy.sr_gain)),
            ScorerSpec::Remote(endpoint) => remote(endpoint)?,
        };
        let stage = Stage::Two {
            anchor: &anchor,
            fixed_condition: cfg.stage2.fixed_condition,
        };
        let sc: &StageConfig = &cfg.stage2.stage;
        let report = run_stage(
            stage,
            ctx,
            &mut params,
            scorer.as_mut(),
            &Views::Random(cfg.scene.clone()),
            sc,
        )?;
        check_finite(&report, 2)?;
        write_texture_set(&params.textures()?, dir.join("textures"))?;
        Some(report)
    } else {
        None
    };

    let textures = params.textures()?;
    write_texture_set(&textures, out.join("textures"))?;
    Ok(TexgenReport {
        stage1,
        stage2,
        recovery,
        textures,
    })
}

/// `count` evaluation cameras in two elevation rings.
pub fn eval_views(count: usize, fov_deg: f32) -> Vec<SceneSample> {
    let low = count / 2;
    let mut views = fixed_views(low, 1.8, 10.0, fov_deg);
    views.extend(
        fixed_views(count - low, 1.8, 35.0, fov_deg)
            .into_iter()
            .map(|v| SceneSample {
                azimuth: v.azimuth + std::f32::consts::PI / (count - low) as f32,
                ..v
            }),
    );
    views
}

/// Renders `textures` on the configured mesh under the evaluation
/// environment from [`eval_views`], writing `view_NN.png`.
pub fn render_views(cfg: &RunConfig, textures: &TextureSet, count: usize, size: usize) -> Result<usize, CliError> {
    let out = cfg.out.as_path();
    write_resolved(out, &cfg.to_json())?;
    let mesh = bundled::mesh_by_name(&cfg.mesh)?;
    let env = load_env(&cfg.env_eval)?;
    let views = eval_views(count, cfg.scene.fov_deg);
    for (i, v) in views.iter().enumerate() {
        let gb = rasterize(&mesh, v, size, size)?;
        let img = shade(&gb, textures, &env, v, &cfg.shade)?;
        crate::assets::write_png(
            out.join(format!("view_{i:02}.png")),
            &crate::assets::srgb_png(&tonemap(&img))?,
        )?;
    }
    Ok(views.len())
}
