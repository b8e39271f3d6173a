//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits nonzero if any fails. Criteria run one at a time so the
//! runtime budgets are measured without contention.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use texdistill::analysis::gradcheck::default_suite;
use texdistill::analysis::{
    display_image, sr_anchor_experiment, toy2d_experiment, Model, Param, SrAnchorConfig, Toy2DConfig, Toy2DReport,
};
use texdistill::assets::bundled;
use texdistill::cli::{texgen, RunConfig};
use texdistill::gradtape::Tensor;
use texdistill::render::{env_brdf_lut, DEFAULT_LUT_RESOLUTION};
use texdistill::score::{degenerate_eps, predict_x0, DegenerateModel, DiffusionSchedule};
use texdistill::sds::{sds_grad, Query, SdsOptions, WeightMode};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn image(seed: u64, h: usize, lo: f32, hi: f32) -> Tensor {
    let mut rng = common::rng(seed);
    Tensor::from_fn(vec![h, h, 3], |_| common::uniform(&mut rng, lo, hi))
}

fn zero_variance_gradient() -> Verdict {
    let x0 = image(1, 16, 0.0, 1.0);
    let target = image(2, 16, 0.0, 1.0);
    let want = x0.sub(&target).unwrap();
    let mut scorer = DegenerateModel::single(target);
    let opts = SdsOptions {
        weight: WeightMode::Constant,
        ..Default::default()
    };
    let mut rng = common::rng(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (g, _) = sds_grad(&mut scorer, &x0, &opts, Query::default(), &mut rng).unwrap();
        worst = worst.max(g.rel_err(&want).unwrap());
    }
    verdict(
        worst <= 1e-6,
        format!("10 draws, worst rel err {worst:.2e} (limit 1e-6)"),
    )
}

fn denoised_estimate_identity() -> Verdict {
    let mut rng = common::rng(4);
    let (mut worst, mut worst_t) = (0.0f64, 0.0f32);
    for i in 0..100 {
        let t = common::uniform(&mut rng, 1e-3, 1.0);
        let alpha_bar = DiffusionSchedule::Cosine.alpha_bar(t).unwrap();
        let target = image(100 + i, 8, 0.0, 1.0);
        let x_t = image(200 + i, 8, -3.0, 3.0);
        let eps = degenerate_eps(&x_t, alpha_bar, &target).unwrap();
        let err = predict_x0(&x_t, alpha_bar, &eps).unwrap().rel_err(&target).unwrap();
        if err > worst {
            (worst, worst_t) = (err, t);
        }
    }
    verdict(
        worst <= 1e-6,
        format!("100 draws, worst rel err {worst:.2e} at t={worst_t:.3} (limit 1e-6)"),
    )
}

fn toy2d_curves(report: &Toy2DReport, elapsed: Duration) -> Verdict {
    let psnr = |m, p| {
        report
            .summary()
            .into_iter()
            .find(|r| r.model == m && r.param == p)
            .unwrap()
    };
    let pe = psnr(Model::Pixel, Param::Explicit);
    let le = psnr(Model::Latent, Param::Explicit);
    let ld = psnr(Model::Latent, Param::Dip);
    let checks = [
        pe.psnr_min >= 40.0,
        le.psnr_mean <= pe.psnr_mean - 10.0,
        le.latent_residual_rel_max < 1e-2,
        ld.psnr_mean >= le.psnr_mean + 3.0,
        elapsed < Duration::from_secs(600),
    ];
    verdict(
        checks.iter().all(|c| *c),
        format!(
            "pixel/explicit min {:.2} dB, latent/explicit {:.2} dB (residual {:.1e}), latent/dip {:.2} dB, {:.0?}",
            pe.psnr_min, le.psnr_mean, le.latent_residual_rel_max, ld.psnr_mean, elapsed
        ),
    )
}

fn dip_suppresses_high_band(report: &Toy2DReport) -> Verdict {
    let mut pairs = Vec::new();
    for seed in report.seeds() {
        for model in [Model::Pixel, Model::Latent] {
            let hf = |p| report.cell(seed, model, p).unwrap().high_band_energy;
            pairs.push((seed, model, hf(Param::Dip), hf(Param::Explicit)));
        }
    }
    let bad: Vec<_> = pairs.iter().filter(|(_, _, d, e)| d >= e).collect();
    verdict(
        bad.is_empty(),
        format!(
            "{} matched runs, {} with dip >= explicit {bad:?}",
            pairs.len(),
            bad.len()
        ),
    )
}

fn sr_anchoring() -> Verdict {
    let start = Instant::now();
    let init = display_image(&bundled::astronaut_256());
    let report = sr_anchor_experiment(&init, &SrAnchorConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let fixed = report.fixed.last().psnr_to_anchor;
    let ratio = report.self_cond.high_band_ratio();
    verdict(
        fixed >= 30.0 && ratio > 2.0 && elapsed < Duration::from_secs(300),
        format!("fixed {fixed:.2} dB (>= 30), self-cond high band x{ratio:.3} (> 2), {elapsed:.0?}"),
    )
}

fn rendering_gradients() -> Verdict {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let rows = default_suite(&seeds);
    let elapsed = start.elapsed();
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let mut channels: Vec<_> = rows.iter().map(|r| r.channel).collect();
    channels.sort_unstable();
    channels.dedup();
    verdict(
        worst < 1e-3 && channels.len() == 4 && elapsed < Duration::from_secs(120),
        format!(
            "{} rows over {channels:?}, worst rel err {worst:.2e} (< 1e-3), {elapsed:.0?}",
            rows.len()
        ),
    )
}

fn shading_oracle() -> Verdict {
    let start = Instant::now();
    let (err, pixels) = common::shading_oracle_error(64, 128);
    let lut = env_brdf_lut(DEFAULT_LUT_RESOLUTION).unwrap();
    let lut_ok = lut
        .data
        .iter()
        .all(|[a, b]| (0.0..=1.0).contains(a) && (0.0..=1.0).contains(b) && a + b <= 1.01);
    let elapsed = start.elapsed();
    verdict(
        err < 0.05 && pixels > 0 && lut_ok && elapsed < Duration::from_secs(300),
        format!("{pixels} px, worst rel err {err:.4} (< 0.05), LUT bounded: {lut_ok}, {elapsed:.0?}"),
    )
}

fn toy_run(out: &Path, extra: serde_json::Value) -> RunConfig {
    let mut json = serde_json::json!({
        "mesh": "builtin:sphere",
        "prompt": "ground truth",
        "scorer": "toy",
        "resolution": 512,
        "out": out,
    });
    json.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let mut cfg = RunConfig::from_json(&json.to_string()).unwrap();
    cfg.finish().unwrap();
    cfg
}

fn texture_recovery() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_run(
        dir.path(),
        serde_json::json!({ "stage2": { "enabled": false }, "toy": { "views": 8 } }),
    );
    let start = Instant::now();
    let report = texgen(&cfg).unwrap();
    let elapsed = start.elapsed();
    let scores = report.recovery.unwrap();
    let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        scores.len() == 8 && worst >= 30.0 && cfg.stage1.steps <= 1500 && elapsed < Duration::from_secs(1200),
        format!(
            "{} steps, per-view PSNR {scores:.2?} (>= 30), {elapsed:.0?}",
            cfg.stage1.steps
        ),
    )
}

fn deterministic_metrics() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let files = ["stage1/metrics.csv", "stage2/metrics.csv"];
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let cfg = toy_run(
            &dir.path().join(name),
            serde_json::json!({
                "seed": 11,
                "stage1": { "steps": 30, "batch": 2, "render_size": 32 },
                "stage2": { "stage": { "steps": 10, "batch": 2, "render_size": 32 } },
            }),
        );
        texgen(&cfg).unwrap();
        runs.push(files.map(|f| std::fs::read(cfg.out.join(f)).unwrap()));
    }
    verdict(
        runs[0] == runs[1],
        format!("{files:?} identical across two runs: {}", runs[0] == runs[1]),
    )
}

fn run(name: &str, criterion: impl FnOnce() -> Verdict) -> bool {
    let v = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v.pass
}

fn main() {
    let mut results = vec![
        run("sds zero-variance gradient", zero_variance_gradient),
        run("denoised estimate identity", denoised_estimate_identity),
    ];

    let start = Instant::now();
    let toy2d = catch_unwind(|| {
        let seeds = [0, 1, 2];
        toy2d_experiment(
            &display_image(&bundled::astronaut_64()),
            &Toy2DConfig::default(),
            &seeds,
        )
        .unwrap()
    });
    let elapsed = start.elapsed();
    match &toy2d {
        Ok(report) => {
            results.push(run("toy2d reconstruction", || toy2d_curves(report, elapsed)));
            results.push(run("dip high-band suppression", || dip_suppresses_high_band(report)));
        }
        Err(_) => {
            results.push(run("toy2d reconstruction", || verdict(false, "experiment panicked")));
            results.push(run("dip high-band suppression", || {
                verdict(false, "experiment panicked")
            }));
        }
    }

    results.push(run("sr anchoring", sr_anchoring));
    results.push(run("rendering gradients", rendering_gradients));
    results.push(run("shading oracle", shading_oracle));
    results.push(run("texture recovery", texture_recovery));
    results.push(run("determinism", deterministic_metrics));

    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
