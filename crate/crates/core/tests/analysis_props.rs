mod common;

use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use texdistill::analysis::{power_spectrum, psnr, sr_anchor_experiment, SrAnchorConfig};
use texdistill::assets::bundled;
use texdistill::gradtape::Tensor;
use texdistill::score::{sr_downsample, sr_target};

proptest! {
    #![proptest_config(common::proptest_config(32))]

    #[test]
    fn spectrum_satisfies_parseval(seed in any::<u64>(), half in 2usize..24, channels in 1usize..4) {
        let n = 2 * half;
        let mut rng = common::rng(seed);
        let image = Tensor::from_fn(vec![n, n, channels], |_| common::uniform(&mut rng, -1.0, 1.0));
        let report = power_spectrum(&image).unwrap();
        let gray: Vec<f64> = image
            .data()
            .chunks(channels)
            .map(|px| px.iter().map(|v| f64::from(*v)).sum::<f64>() / channels as f64)
            .collect();
        let mean_sq = gray.iter().map(|v| v * v).sum::<f64>() / gray.len() as f64;
        prop_assert!((report.total_power - mean_sq).abs() <= 1e-4 * mean_sq);
        prop_assert!(report.bin_power.iter().sum::<f64>() <= report.total_power * (1.0 + 1e-9));
    }

    #[test]
    fn psnr_of_uniform_offset(seed in any::<u64>(), offset in 0.01f32..0.5) {
        let mut rng = common::rng(seed);
        let a = Tensor::from_fn(vec![8, 8, 3], |_| common::uniform(&mut rng, 0.0, 1.0));
        let b = a.map(|v| v + offset);
        let want = -20.0 * f64::from(offset).log10();
        prop_assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-3);
    }
}

#[test]
fn white_noise_profile_is_flat() {
    let n = 64;
    let mut mean: Vec<f64> = Vec::new();
    for seed in 0..32 {
        let mut rng = common::rng(seed);
        let image = Tensor::from_fn(vec![n, n, 1], |_| StandardNormal.sample(&mut rng));
        let profile = power_spectrum(&image).unwrap().radial_mean();
        if mean.is_empty() {
            mean = vec![0.0; profile.len()];
        }
        for (m, p) in mean.iter_mut().zip(profile) {
            *m += p / 32.0;
        }
    }
    let ac = &mean[1..];
    let level = ac.iter().sum::<f64>() / ac.len() as f64;
    let worst = ac.iter().map(|p| (p / level - 1.0).abs()).fold(0.0, f64::max);
    assert!(
        worst <= 0.1,
        "worst bin deviates {:.1}% from the mean: {ac:?}",
        100.0 * worst
    );
}

fn sr_config(gain: f32) -> SrAnchorConfig {
    SrAnchorConfig {
        gain,
        ..Default::default()
    }
}

#[test]
fn sr_without_sharpening_converges_to_upsampled_anchor() {
    let init = bundled::astronaut_256();
    let report = sr_anchor_experiment(&init, &sr_config(0.0)).unwrap();
    let upsampled = sr_target(&report.anchor, 0.0).unwrap();
    let to_upsampled = psnr(&report.fixed.image, &upsampled).unwrap();
    let to_anchor = psnr(&sr_downsample(&report.fixed.image).unwrap(), &report.anchor).unwrap();
    assert!(to_upsampled >= 40.0, "PSNR to U(anchor) {to_upsampled:.2} dB");
    assert!(
        to_anchor >= 40.0,
        "PSNR(down(x), anchor) {to_anchor:.2} dB, PSNR to U(anchor) {to_upsampled:.2} dB"
    );
}

#[test]
fn fixed_condition_best_so_far_is_monotone() {
    let init = bundled::astronaut_256();
    let report = sr_anchor_experiment(&init, &sr_config(1.0)).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut curve = Vec::new();
    for c in report.fixed.checkpoints.iter().filter(|c| c.step >= 100) {
        best = best.max(c.psnr_to_anchor);
        curve.push(best);
    }
    assert!(curve.len() > 10);
    assert!(curve.windows(2).all(|w| w[1] >= w[0]));
    assert!(report.fixed.last().psnr_to_anchor >= 30.0);
}
