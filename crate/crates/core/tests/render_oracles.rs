mod common;

use std::f32::consts::TAU;

use proptest::prelude::*;
use texdistill::analysis::gradcheck::{random_textures, smooth_env};
use texdistill::assets::{bundled, EnvironmentMap};
use texdistill::render::{
    env_brdf_lut, prefilter_env, rasterize, shade, uv_to_dir, EnvImage, GBuffer, PrefilteredEnv, SceneSample,
    ShadeOptions, DEFAULT_LUT_RESOLUTION, DEFAULT_MIPS, DEFAULT_SAMPLES,
};

fn sphere(size: usize, sample: &SceneSample) -> GBuffer {
    rasterize(&bundled::uv_sphere(24, 48), sample, size, size).unwrap()
}

fn smooth_penv() -> PrefilteredEnv {
    prefilter_env(&smooth_env(32), DEFAULT_MIPS, 64).unwrap()
}

#[test]
fn shading_matches_radiance_integral() {
    let (err, pixels) = common::shading_oracle_error(32, 96);
    assert!(pixels > 100);
    assert!(err < 0.05, "max relative error {err}");
}

#[test]
fn brdf_lut_is_bounded() {
    let lut = env_brdf_lut(DEFAULT_LUT_RESOLUTION).unwrap();
    for [a, b] in &lut.data {
        assert!((0.0..=1.0).contains(a) && (0.0..=1.0).contains(b), "{a} {b}");
        assert!(a + b <= 1.01, "{a} + {b}");
    }
    let [a, b] = lut.at(0, DEFAULT_LUT_RESOLUTION - 1);
    assert!((a - 1.0).abs() < 0.02 && b.abs() < 0.02);
}

/// Radiance-weighted peak and mean angular distance from `dir`.
fn peak_and_spread(level: &EnvImage, dir: [f32; 3]) -> (f32, f64) {
    let (h, w) = (level.height(), level.width());
    let (mut peak, mut num, mut den) = (0.0f32, 0.0f64, 0.0f64);
    for y in 0..h {
        let v = (y as f32 + 0.5) / h as f32;
        let solid = (std::f32::consts::PI * v).sin() as f64;
        for x in 0..w {
            let px = &level.data()[(y * w + x) * 3..][..3];
            let lum = px.iter().sum::<f32>() / 3.0;
            peak = peak.max(lum);
            let d = uv_to_dir((x as f32 + 0.5) / w as f32, v).to_array();
            let cos = (d[0] * dir[0] + d[1] * dir[1] + d[2] * dir[2]).clamp(-1.0, 1.0);
            num += (lum as f64) * solid * (cos.acos() as f64);
            den += (lum as f64) * solid;
        }
    }
    (peak, num / den)
}

#[test]
fn impulse_spreads_with_roughness() {
    let (h, w) = (32, 64);
    let (iy, ix) = (h / 2, w / 3);
    let env = EnvironmentMap::from_fn(h, |y, x| if (y, x) == (iy, ix) { [500.0; 3] } else { [0.0; 3] }).unwrap();
    let penv = prefilter_env(&env, DEFAULT_MIPS, DEFAULT_SAMPLES).unwrap();
    let dir = uv_to_dir((ix as f32 + 0.5) / w as f32, (iy as f32 + 0.5) / h as f32).to_array();
    let stats: Vec<_> = penv.levels.iter().map(|l| peak_and_spread(l, dir)).collect();
    for k in 1..stats.len() {
        assert!(stats[k].0 < stats[k - 1].0, "peak level {k}: {stats:?}");
        assert!(stats[k].1 > stats[k - 1].1, "spread level {k}: {stats:?}");
    }
}

#[test]
fn full_turn_of_environment_is_identity() {
    let penv = smooth_penv();
    let mut rng = common::rng(3);
    let tex = random_textures(&mut rng, 16);
    for rot in [0.0, 0.9, 2.5, 4.4] {
        let mut s = SceneSample::looking_at_origin(1.8, 0.6, 0.3, 45f32.to_radians());
        let gb = sphere(48, &s);
        s.env_rotation = rot;
        let a = shade(&gb, &tex, &penv, &s, &ShadeOptions::default()).unwrap();
        s.env_rotation = rot + TAU;
        let b = shade(&gb, &tex, &penv, &s, &ShadeOptions::default()).unwrap();
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(diff <= 1e-5, "rotation {rot}: {diff}");
    }
}

proptest! {
    #![proptest_config(common::proptest_config(16))]

    #[test]
    fn coverage_ignores_textures(seed in any::<u64>(), az in 0.0f32..TAU, el in -0.8f32..0.8) {
        let penv = smooth_penv();
        let s = SceneSample::looking_at_origin(1.7, az, el, 50f32.to_radians());
        let gb = sphere(32, &s);
        prop_assert_eq!(&gb, &sphere(32, &s));
        let bg = ShadeOptions { background: [0.25, 0.5, 0.75], normal_mapping: true };
        let mut rng = common::rng(seed);
        let images: Vec<_> = (0..2)
            .map(|_| shade(&gb, &random_textures(&mut rng, 16), &penv, &s, &bg).unwrap())
            .collect();
        for img in &images {
            for (i, covered) in gb.coverage.iter().enumerate() {
                let px = &img.data()[i * 3..][..3];
                prop_assert_eq!(px == bg.background, !covered, "pixel {}", i);
            }
        }
    }

    #[test]
    fn shading_is_linear_in_radiance(seed in any::<u64>(), exp in -3i32..4, scale in 0.1f32..10.0) {
        let env = smooth_env(16);
        let base = prefilter_env(&env, 4, 32).unwrap();
        let s = SceneSample::looking_at_origin(1.8, 0.3, 0.2, 45f32.to_radians());
        let gb = sphere(24, &s);
        let mut rng = common::rng(seed);
        let tex = random_textures(&mut rng, 8);
        let opts = ShadeOptions { background: [0.0; 3], normal_mapping: true };
        let img = shade(&gb, &tex, &base, &s, &opts).unwrap();

        let pow2 = 2f32.powi(exp);
        let exact = shade(&gb, &tex, &prefilter_env(&env.scaled(pow2), 4, 32).unwrap(), &s, &opts).unwrap();
        let want = img.scaled(pow2);
        prop_assert_eq!(exact.data(), want.data());

        let scaled = shade(&gb, &tex, &prefilter_env(&env.scaled(scale), 4, 32).unwrap(), &s, &opts).unwrap();
        let err = scaled.rel_err(&img.scaled(scale)).unwrap();
        prop_assert!(err < 1e-5, "scale {}: {}", scale, err);
    }
}
